#include <stdio.h>
#include <stdlib.h>

int main(void) {
    char *name = malloc(32);
    snprintf(name, 32, "tidy");
    printf("%s\n", name);
    free(name);
    return 3;
}
