//! Inputs shared by the benchmarks.

use ccoach_core::telemetry::{EventKind, UsageEvent};

pub const CLANG_STDERR: &str = "prog.c:5:20: error: use of undeclared identifier 'totl'; did you mean 'total'?
    printf(\"%d\\n\", totl);
                   ^~~~
                   total
prog.c:4:9: note: 'total' declared here
    int total = 0;
        ^
prog.c:9:5: warning: format specifies type 'int' but the argument has type 'double' [-Wformat]
    printf(\"%d\\n\", 2.5);
           ~~     ^~~
           %f
1 warning and 1 error generated.
";

pub const ASAN_REPORT: &str = "=================================================================
==2417==ERROR: AddressSanitizer: heap-buffer-overflow on address 0x603000000020 at pc 0x5581d5b3c2f5 bp 0x7ffd4c7a0f70 sp 0x7ffd4c7a0f60
WRITE of size 4 at 0x603000000020 thread T0
    #0 0x5581d5b3c2f4 in fill /tmp/w/prog.c:5
    #1 0x5581d5b3c3a1 in main /tmp/w/prog.c:12
    #2 0x7f1e0d229d8f in __libc_start_call_main ../sysdeps/nptl/libc_start_call_main.h:58
    #3 0x7f1e0d229e3f in __libc_start_main_impl ../csu/libc-start.c:392
    #4 0x5581d5b3c1c4 in _start (/tmp/w/prog+0x11c4)

0x603000000020 is located 0 bytes to the right of 16-byte region [0x603000000010,0x603000000020)
allocated by thread T0 here:
    #0 0x7f1e0d6b4887 in __interceptor_malloc ../../../../src/libsanitizer/asan/asan_malloc_linux.cpp:145
    #1 0x5581d5b3c37a in main /tmp/w/prog.c:10

SUMMARY: AddressSanitizer: heap-buffer-overflow /tmp/w/prog.c:5 in fill
==2417==ABORTING
";

/// A C file of `functions` small functions with a comment header each.
pub fn program(functions: usize) -> String {
    let mut src = String::from("// Lab 4 by Alice Nguyen (z1234567), alice.nguyen@student.example.edu\n#include <stdio.h>\n\n");
    for i in 0..functions {
        src.push_str(&format!(
            "/* helper {i}: adds up the\n * first n squares */\nint sum_{i}(int n) {{\n    int total = 0; // running total\n    for (int k = 0; k < n; k++) {{\n        total += k * k;\n    }}\n    return total;\n}}\n\n"
        ));
    }
    src.push_str("int main(void) {\n    printf(\"%d\\n\", sum_0(4));\n    return 0;\n}\n");
    src
}

/// `n` help events spread over ten weeks from 2023-02-13 (UTC).
pub fn help_events(n: usize) -> Vec<UsageEvent> {
    let start = 1_676_246_400;
    (0..n)
        .map(|i| {
            let kind = if i % 4 == 0 { EventKind::HelpRuntime } else { EventKind::HelpCompile };
            let ts = start + (i as i64 * 7919) % (70 * 86400);
            UsageEvent::new(ts, kind, format!("{:016x}", i % 300), 800)
        })
        .collect()
}
