#include <stdio.h>
#include <stdlib.h>

int main(void) {
    char *name = malloc(32);
    snprintf(name, 32, "leaky");
    printf("%s\n", name);
    return 0;
}
