#include <stdio.h>
#include <stdlib.h>

int main(void) {
    int *values = malloc(5 * sizeof(int));
    for (int i = 0; i <= 5; i++) {
        values[i] = i * i;
    }
    printf("%d\n", values[2]);
    free(values);
    return 0;
}
