//! Fixtures shared by the integration tests.
#![allow(dead_code)]

use ccoach_core::runtime::{FrameLocals, LocalsSnapshot, ReportCause, RuntimeReport, SanitizerKind, Variable};
use ccoach_core::{match_rules, render_enhanced_message, ErrorContext, Phase, PromptBundle, RuleTable, SourceFile};

/// The uninitialized-array program, numbered from line 1.
pub const LISTING_PROGRAM: &str = "int main(void) {\n    int numbers[10];\n    for (int i = 1; i < 10; i++) {\n        numbers[i] = i;\n    }\n    printf(\"%d\\n\", numbers[0]);\n}\n";

pub fn listing_context() -> ErrorContext {
    let mut ctx = ErrorContext {
        phase: Phase::RunTime,
        timestamp: 1_700_000_000,
        source_files: vec![SourceFile {
            path: "program.c".into(),
            contents: LISTING_PROGRAM.as_bytes().to_vec(),
        }],
        diagnostics: vec![],
        primary_diagnostic: None,
        enhanced_message: None,
        runtime_report: Some(RuntimeReport {
            cause: ReportCause::SanitizerReport(SanitizerKind::UseOfUninitialized),
            error_file: Some("program.c".into()),
            error_line: Some(6),
            function_name: Some("main".into()),
            headline: "Conditional jump or move depends on uninitialised value(s)".into(),
            raw_report: String::new(),
        }),
        locals: Some(LocalsSnapshot {
            frames: vec![FrameLocals {
                function: "main".into(),
                file: Some("program.c".into()),
                line: Some(6),
                variables: vec![
                    Variable {
                        name: "numbers".into(),
                        rendered_value: "{<uninitialized value>,1,2,3,4,5,6,7,8,9}".into(),
                        is_uninitialized: false,
                    },
                    Variable {
                        name: "numbers[0]".into(),
                        rendered_value: "<uninitialized value>".into(),
                        is_uninitialized: true,
                    },
                ],
            }],
        }),
        binary_hash: "0".repeat(64),
    };
    let table = RuleTable::bundled();
    let rule = match_rules(&ctx, table.rules()).expect("uninitialized-variable rule");
    ctx.enhanced_message = Some(render_enhanced_message(rule, &ctx).unwrap());
    ctx
}

/// Both messages in the layout of a chat transcript.
pub fn render_bundle(bundle: &PromptBundle) -> String {
    format!(
        "system:content:\n{}\n\nuser:content:\n{}\n",
        bundle.system_message, bundle.user_message
    )
}
