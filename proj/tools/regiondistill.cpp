#include "rd/cli.hpp"

int main(int argc, char** argv) { return rd::dispatch(argc, argv); }
