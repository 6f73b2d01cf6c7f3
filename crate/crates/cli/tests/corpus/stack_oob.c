#include <stdio.h>

int main(void) {
    int scores[4] = {1, 2, 3, 4};
    int total = 0;
    for (int i = 0; i <= 4; i++) {
        total += scores[i];
    }
    printf("%d\n", total);
    return 0;
}
