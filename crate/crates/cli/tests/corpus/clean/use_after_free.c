#include <stdio.h>
#include <stdlib.h>

int main(void) {
    int *data = malloc(sizeof(int));
    *data = 42;
    printf("%d\n", *data);
    free(data);
    return 0;
}
