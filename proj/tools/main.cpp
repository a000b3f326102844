#include "commands.hpp"

int main(int argc, char** argv) { return dispatch(argc, argv); }
