//! Optional removal of fenced code blocks from AI replies.

pub const CODE_PLACEHOLDER: &str = "[code omitted - try writing it yourself!]";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Fence {
    ch: char,
    len: usize,
}

/// Opening fence: up to three spaces, then three or more backticks or tildes.
/// Backtick fences may not contain a backtick in the info string.
fn opening_fence(line: &str) -> Option<Fence> {
    let indent = line.len() - line.trim_start_matches(' ').len();
    if indent > 3 {
        return None;
    }
    let rest = &line[indent..];
    let ch = rest.chars().next().filter(|c| *c == '`' || *c == '~')?;
    let len = rest.chars().take_while(|c| *c == ch).count();
    if len < 3 || (ch == '`' && rest[len..].contains('`')) {
        return None;
    }
    Some(Fence { ch, len })
}

fn closes(line: &str, fence: Fence) -> bool {
    let trimmed = line.trim_end_matches(['\n', '\r']);
    let indent = trimmed.len() - trimmed.trim_start_matches(' ').len();
    if indent > 3 {
        return false;
    }
    let rest = &trimmed[indent..];
    let len = rest.chars().take_while(|c| *c == fence.ch).count();
    len >= fence.len && rest[len..].trim().is_empty()
}

/// Could `partial` (a line without its newline yet) still turn out to be a
/// fence line?
fn may_be_fence(partial: &str) -> bool {
    let indent = partial.len() - partial.trim_start_matches(' ').len();
    if indent > 3 {
        return false;
    }
    let rest = &partial[indent..];
    match rest.chars().next() {
        None => true,
        Some(ch @ ('`' | '~')) => {
            let run = rest.chars().take_while(|c| *c == ch).count();
            run == rest.chars().count() || run >= 3
        }
        Some(_) => false,
    }
}

/// Streaming fence remover. Text outside fences passes through as soon as
/// it is known not to start a fence; each block becomes one placeholder
/// line, and an unterminated block swallows the rest of the reply.
#[derive(Debug, Default)]
pub struct CodeBlockFilter {
    inside: Option<Fence>,
    pending: String,
    /// The current line has already been passed through in part.
    passing: bool,
}

impl CodeBlockFilter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, chunk: &str) -> String {
        let mut out = String::new();
        for piece in chunk.split_inclusive('\n') {
            let complete = piece.ends_with('\n');
            if self.passing {
                out.push_str(piece);
                self.passing = !complete;
                continue;
            }
            self.pending.push_str(piece);
            if complete {
                let line = std::mem::take(&mut self.pending);
                self.line(&line, &mut out);
            } else if self.inside.is_none() && !may_be_fence(&self.pending) {
                out.push_str(&std::mem::take(&mut self.pending));
                self.passing = true;
            }
        }
        out
    }

    pub fn finish(&mut self) -> String {
        let mut out = String::new();
        let line = std::mem::take(&mut self.pending);
        if !line.is_empty() {
            self.line(&line, &mut out);
        }
        self.passing = false;
        out
    }

    fn line(&mut self, line: &str, out: &mut String) {
        match self.inside {
            Some(fence) => {
                if closes(line, fence) {
                    self.inside = None;
                }
            }
            None => match opening_fence(line.trim_end_matches(['\n', '\r'])) {
                Some(fence) => {
                    self.inside = Some(fence);
                    out.push_str(CODE_PLACEHOLDER);
                    out.push('\n');
                }
                None => out.push_str(line),
            },
        }
    }
}

/// Replaces every fenced code block in `text` with a placeholder line.
/// Inline code spans are left alone.
pub fn strip_code_blocks(text: &str) -> String {
    let mut filter = CodeBlockFilter::new();
    let mut out = filter.push(text);
    out.push_str(&filter.finish());
    out
}
