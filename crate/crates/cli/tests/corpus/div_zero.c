#include <stdio.h>

int average(int total, int count) {
    return total / count;
}

int main(void) {
    int count = 0;
    printf("%d\n", average(10, count));
    return 0;
}
