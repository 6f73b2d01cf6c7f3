#include <stdio.h>

int main(void) {
    int numbers[10];
    for (int i = 0; i < 10; i++) {
        numbers[i] = i;
    }
    printf("%d\n", numbers[0]);
}
