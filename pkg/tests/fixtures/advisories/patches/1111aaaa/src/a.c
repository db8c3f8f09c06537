#include <string.h>

int copy_name(char *dst, const char *src) {
    strcpy(dst, src);
    return 0;
}

int add(int a, int b) {
    return a + b;
}
