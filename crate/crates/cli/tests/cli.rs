use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};

use ccoach::driver::{HINT, NO_PRIOR_ERROR};
use ccoach_core::help::{DISCLAIMER, EXAM_MODE_MESSAGE};
use tempfile::TempDir;

struct Env {
    dir: TempDir,
    config: PathBuf,
}

impl Env {
    fn new(extra: &str) -> Self {
        let dir = tempfile::tempdir().unwrap();
        let mocks = dir.path().join("mocks");
        fs::create_dir_all(&mocks).unwrap();
        fs::write(
            mocks.join("default.txt"),
            "The message means a name was used before it was declared.\n```c\nint x;\n```\nCheck the spelling.",
        )
        .unwrap();
        let config = dir.path().join("ccoach.conf");
        fs::write(
            &config,
            format!(
                "state_directory = {}\nlog_directory = {}\nmock_responses = {}\n{extra}",
                dir.path().join("state").display(),
                dir.path().join("logs").display(),
                mocks.display()
            ),
        )
        .unwrap();
        Env { dir, config }
    }

    fn path(&self) -> &Path {
        self.dir.path()
    }

    fn run(&self, args: &[&str]) -> Output {
        Command::new(env!("CARGO_BIN_EXE_ccoach"))
            .args(args)
            .env("CCOACH_CONFIG", &self.config)
            .current_dir(self.path())
            .stdin(Stdio::null())
            .output()
            .unwrap()
    }

    fn event_lines(&self) -> Vec<String> {
        let Ok(entries) = fs::read_dir(self.path().join("logs")) else {
            return Vec::new();
        };
        let mut lines = Vec::new();
        for entry in entries {
            let path = entry.unwrap().path();
            if path.file_name().unwrap().to_string_lossy().starts_with("events-") {
                lines.extend(fs::read_to_string(path).unwrap().lines().map(str::to_string));
            }
        }
        lines
    }
}

fn text(bytes: &[u8]) -> String {
    String::from_utf8_lossy(bytes).into_owned()
}

const UNDECLARED: &str = "#include <stdio.h>\n\nint main(void) {\n    int total = 0;\n    printf(\"%d\\n\", totl);\n    return 0;\n}\n";

#[test]
fn version_and_usage() {
    let env = Env::new("");
    let out = env.run(&["--version"]);
    assert!(out.status.success());
    assert!(text(&out.stdout).starts_with("ccoach "));
    let out = env.run(&["--usage"]);
    assert!(out.status.success());
    assert!(text(&out.stdout).starts_with("Usage:"));
    assert!(env.event_lines().is_empty());
}

#[test]
fn bad_arguments_exit_2() {
    let env = Env::new("");
    let out = env.run(&["--stats", "--reviewers", "3"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(text(&out.stderr).contains("Usage:"));
}

#[test]
fn help_without_a_prior_error() {
    let env = Env::new("");
    let out = env.run(&["--help"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(text(&out.stderr).contains(NO_PRIOR_ERROR));
    assert!(out.stdout.is_empty());
}

#[test]
fn clean_compile_is_quiet() {
    let env = Env::new("");
    fs::write(env.path().join("ok.c"), "int main(void) { return 0; }\n").unwrap();
    let out = env.run(&["ok.c", "-o", "ok"]);
    assert!(out.status.success(), "{}", text(&out.stderr));
    assert!(out.stdout.is_empty());
    assert!(out.stderr.is_empty(), "{}", text(&out.stderr));
    let events = env.event_lines();
    assert_eq!(events.len(), 1);
    assert!(events[0].contains("\tcompile-ok\t"));
}

#[test]
fn compile_error_then_help() {
    let env = Env::new("strip_code_blocks = true\n");
    fs::write(env.path().join("sum.c"), UNDECLARED).unwrap();
    let out = env.run(&["sum.c", "-o", "sum"]);
    assert_ne!(out.status.code(), Some(0));
    let err = text(&out.stderr);
    // The compiler's own output comes first, then the explanation.
    let explained = err.find("Error in sum.c at line 5:").expect(&err);
    assert!(err[..explained].contains("error:"));
    assert!(err.contains("--> "));
    assert!(err.trim_end().ends_with(HINT));

    let out = env.run(&["--help"]);
    assert!(out.status.success(), "{}", text(&out.stderr));
    let reply = text(&out.stdout);
    assert!(reply.starts_with(DISCLAIMER), "{reply}");
    assert!(reply.contains("declared."));
    assert!(reply.contains("[code omitted - try writing it yourself!]"));
    assert!(!reply.contains("int x;"));

    let events = env.event_lines();
    assert_eq!(events.len(), 2);
    assert!(events[0].contains("\tcompile-error\t"));
    assert!(events[1].contains("\thelp-compile\t"));
    let transcripts: Vec<_> = fs::read_dir(env.path().join("logs"))
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.file_name().unwrap().to_string_lossy().starts_with("help-"))
        .collect();
    assert_eq!(transcripts.len(), 1);
    assert!(fs::read_to_string(&transcripts[0]).unwrap().contains("\"file_name\":\"sum.c\""));
}

#[test]
fn runtime_error_is_explained_and_status_kept() {
    let env = Env::new("");
    fs::write(
        env.path().join("div.c"),
        "#include <stdio.h>\n\nint main(int argc, char *argv[]) {\n    int zero = argc - 1;\n    printf(\"%d\\n\", 10 / zero);\n    return 0;\n}\n",
    )
    .unwrap();
    let out = env.run(&["div.c", "-o", "div"]);
    assert!(out.status.success(), "{}", text(&out.stderr));
    let out = Command::new(env.path().join("div"))
        .env("CCOACH_CONFIG", &env.config)
        .stdin(Stdio::null())
        .output()
        .unwrap();
    assert!(!out.status.success());
    let err = text(&out.stderr);
    assert!(err.contains("at line 5:"), "{err}");
    assert!(err.contains("zero = 0"), "{err}");
    assert!(err.trim_end().ends_with(HINT));
    let events = env.event_lines();
    assert!(events.last().unwrap().contains("\truntime-error\t"));
}

#[test]
fn exam_mode_refuses_and_hides_the_hint() {
    let env = Env::new("exam_mode = true\n");
    fs::write(env.path().join("sum.c"), UNDECLARED).unwrap();
    let out = env.run(&["sum.c", "-o", "sum"]);
    assert!(!text(&out.stderr).contains(HINT));
    let out = env.run(&["--help"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(text(&out.stderr).contains(EXAM_MODE_MESSAGE));
    assert!(env.event_lines().last().unwrap().contains("\thelp-refused\t"));
}

#[test]
fn stats_csv_counts_help_use() {
    let env = Env::new("");
    fs::write(env.path().join("sum.c"), UNDECLARED).unwrap();
    env.run(&["sum.c", "-o", "sum"]);
    env.run(&["--help"]);
    env.run(&["--help"]);
    let out = env.run(&["--stats", "--csv"]);
    assert!(out.status.success(), "{}", text(&out.stderr));
    let csv = text(&out.stdout);
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("week,unique_users,compile_help,runtime_help,total"));
    assert_eq!(lines.next(), Some("1,1,2,0,2"));
}

#[test]
fn eval_renders_the_frequency_table() {
    let env = Env::new("");
    let mut csv = String::from(
        "pair_id,reviewer_id,phase,conceptual,no_inaccuracy,correctness,relevance,completeness,code_solution,response_type\n",
    );
    for (i, yes) in [true, true, true, false].iter().enumerate() {
        let y = if *yes { "Y" } else { "N" };
        csv.push_str(&format!("p{i},r1,CT,{y},Y,Y,Y,Y,N,tutor\n"));
        csv.push_str(&format!("q{i},r1,RT,Y,Y,Y,Y,N,N,peer\n"));
    }
    fs::write(env.path().join("records.csv"), csv).unwrap();
    let out = env.run(&["--eval", "records.csv"]);
    assert!(out.status.success(), "{}", text(&out.stderr));
    let table = text(&out.stdout);
    let row = table.lines().find(|l| l.starts_with("Conceptually accurate")).unwrap();
    let cells: Vec<&str> = row.split_whitespace().collect();
    assert!(cells.contains(&"75%") && cells.contains(&"100%"), "{row}");
}

#[test]
fn assign_is_seeded() {
    let env = Env::new("");
    let pairs: String = (0..40).map(|i| format!("pair{i}\n")).collect();
    fs::write(env.path().join("pairs.txt"), pairs).unwrap();
    let args = ["--assign", "pairs.txt", "--reviewers", "4", "--per", "10", "--seed", "7"];
    let first = env.run(&args);
    assert!(first.status.success(), "{}", text(&first.stderr));
    assert_eq!(first.stdout, env.run(&args).stdout);
    let out = text(&first.stdout);
    assert!(out.starts_with("reviewer_id,pair_id\n"));
    // Ten of their own plus one overlap item from each of the other three.
    assert_eq!(out.lines().filter(|l| l.starts_with("reviewer1,")).count(), 13);
}
