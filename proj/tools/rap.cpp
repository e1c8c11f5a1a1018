#include <rap/cli.hpp>

int main(int argc, char** argv)
{
  return rap::cli::run(argc, argv);
}
