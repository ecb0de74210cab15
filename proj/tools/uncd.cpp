#include "uncd/version.hpp"
int main(){return 0;}
