fn main() {
    let argv: Vec<std::ffi::OsString> = std::env::args_os().skip(1).collect();
    ccoach::exit_like(ccoach::run(&argv));
}
