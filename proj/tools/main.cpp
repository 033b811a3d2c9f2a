#include "omnirestore/cli.hpp"

int main(int argc, char** argv) { return omnirestore::dispatch(argc, argv); }
