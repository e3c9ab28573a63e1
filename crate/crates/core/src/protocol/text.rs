//! Line-oriented text form of pulse sequences.
//!
//! ```text
//! # one readout cycle, repeated
//! repeat 250 {
//!     mw_pi MW1A;
//!     mw_pi MW3A;
//!     laser A2 1.5us read1;
//! }
//! ```
//!
//! Statements: `mw_pi LABEL;`, `laser LABEL DURATION [read1|read2];`,
//! `wait DURATION;`, `swap DURATION;`, `repeat N { ... }` (trailing `;`
//! optional). Durations take a `ns`, `us` (or `µs`) or `ms` suffix.

use std::fmt::Write as _;

use super::{Block, Pulse, ReadChannel, Sequence};
use crate::model::LevelDiagram;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Word(String),
    LBrace,
    RBrace,
    Semi,
}

#[derive(Debug, Clone)]
struct Token {
    tok: Tok,
    line: usize,
    column: usize,
}

fn lex(text: &str) -> Vec<Token> {
    let mut out = Vec::new();
    for (li, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("");
        let mut chars = line.char_indices().peekable();
        while let Some(&(ci, c)) = chars.peek() {
            let column = line[..ci].chars().count() + 1;
            let mut push = |tok| {
                out.push(Token {
                    tok,
                    line: li + 1,
                    column,
                })
            };
            match c {
                c if c.is_whitespace() => {
                    chars.next();
                }
                '{' => {
                    push(Tok::LBrace);
                    chars.next();
                }
                '}' => {
                    push(Tok::RBrace);
                    chars.next();
                }
                ';' => {
                    push(Tok::Semi);
                    chars.next();
                }
                _ => {
                    let mut word = String::new();
                    while let Some(&(_, c)) = chars.peek() {
                        if c.is_whitespace() || matches!(c, '{' | '}' | ';') {
                            break;
                        }
                        word.push(c);
                        chars.next();
                    }
                    push(Tok::Word(word));
                }
            }
        }
    }
    out
}

struct Parser<'a> {
    tokens: Vec<Token>,
    pos: usize,
    diagram: &'a LevelDiagram,
    eof: (usize, usize),
}

impl Parser<'_> {
    fn err<T>(&self, at: Option<&Token>, message: impl Into<String>) -> Result<T> {
        let (line, column) = at.map(|t| (t.line, t.column)).unwrap_or(self.eof);
        Err(Error::Syntax {
            line,
            column,
            message: message.into(),
        })
    }

    fn peek(&self) -> Option<&Token> {
        self.tokens.get(self.pos)
    }

    fn next(&mut self) -> Option<Token> {
        let t = self.tokens.get(self.pos).cloned();
        self.pos += 1;
        t
    }

    fn word(&mut self, what: &str) -> Result<(String, Token)> {
        match self.next() {
            Some(t) => match &t.tok {
                Tok::Word(w) => Ok((w.clone(), t.clone())),
                other => self.err(Some(&t), format!("expected {what}, found {}", show(other))),
            },
            None => self.err(None, format!("expected {what}, found end of input")),
        }
    }

    fn expect(&mut self, tok: Tok) -> Result<()> {
        match self.next() {
            Some(t) if t.tok == tok => Ok(()),
            Some(t) => self.err(
                Some(&t),
                format!("expected {}, found {}", show(&tok), show(&t.tok)),
            ),
            None => self.err(None, format!("expected {}, found end of input", show(&tok))),
        }
    }

    fn block_list(&mut self, nested: bool) -> Result<Vec<Block>> {
        let mut blocks = Vec::new();
        loop {
            match self.peek().map(|t| t.tok.clone()) {
                None if nested => return self.err(None, "unclosed `{`"),
                None => return Ok(blocks),
                Some(Tok::RBrace) if nested => return Ok(blocks),
                Some(_) => blocks.push(self.statement()?),
            }
        }
    }

    fn statement(&mut self) -> Result<Block> {
        let (kw, at) = self.word("statement")?;
        let block = match kw.as_str() {
            "mw_pi" => {
                let (label, lt) = self.word("transition label")?;
                if let Err(e) = self.diagram.microwave(&label) {
                    return self.err(Some(&lt), e.to_string());
                }
                self.expect(Tok::Semi)?;
                Block::Pulse(Pulse::MwPi { label })
            }
            "laser" => {
                let (label, lt) = self.word("transition label")?;
                match self.diagram.is_optical(&label) {
                    Ok(true) => {}
                    Ok(false) => {
                        return self.err(Some(&lt), format!("`{label}` is not an optical line"))
                    }
                    Err(e) => return self.err(Some(&lt), e.to_string()),
                }
                let duration_us = self.duration()?;
                let read = match self.peek().map(|t| t.tok.clone()) {
                    Some(Tok::Word(w)) => {
                        let t = self.next().expect("peeked");
                        Some(match w.as_str() {
                            "read1" => ReadChannel::Read1,
                            "read2" => ReadChannel::Read2,
                            _ => return self.err(Some(&t), format!("unknown read tag `{w}`")),
                        })
                    }
                    _ => None,
                };
                self.expect(Tok::Semi)?;
                Block::Pulse(Pulse::Laser {
                    label,
                    duration_us,
                    read,
                })
            }
            "wait" => {
                let duration_us = self.duration()?;
                self.expect(Tok::Semi)?;
                Block::Pulse(Pulse::Wait { duration_us })
            }
            "swap" => {
                let duration_us = self.duration()?;
                self.expect(Tok::Semi)?;
                Block::Pulse(Pulse::Swap { duration_us })
            }
            "repeat" => {
                let (n, nt) = self.word("repeat count")?;
                let count: u32 = match n.parse() {
                    Ok(c) => c,
                    Err(_) => return self.err(Some(&nt), format!("invalid repeat count `{n}`")),
                };
                if count == 0 {
                    return self.err(Some(&nt), "repeat count must be >= 1");
                }
                self.expect(Tok::LBrace)?;
                let body = self.block_list(true)?;
                self.expect(Tok::RBrace)?;
                if matches!(self.peek(), Some(Token { tok: Tok::Semi, .. })) {
                    self.pos += 1;
                }
                Block::Repeat { count, body }
            }
            other => return self.err(Some(&at), format!("unknown statement `{other}`")),
        };
        Ok(block)
    }

    fn duration(&mut self) -> Result<f64> {
        let (w, t) = self.word("duration")?;
        let split = w
            .find(|c: char| c.is_alphabetic() || c == 'µ')
            .unwrap_or(w.len());
        let (num, unit) = w.split_at(split);
        let scale = match unit {
            "ns" => 1e-3,
            "us" | "µs" => 1.0,
            "ms" => 1e3,
            "" => return self.err(Some(&t), format!("duration `{w}` needs a unit (ns, us, ms)")),
            _ => return self.err(Some(&t), format!("unknown time unit `{unit}`")),
        };
        let value: f64 = match num.parse() {
            Ok(v) => v,
            Err(_) => return self.err(Some(&t), format!("invalid number `{num}`")),
        };
        let us = value * scale;
        if !(us > 0.0 && us.is_finite()) {
            return self.err(Some(&t), format!("duration must be > 0, got `{w}`"));
        }
        Ok(us)
    }
}

fn show(tok: &Tok) -> String {
    match tok {
        Tok::Word(w) => format!("`{w}`"),
        Tok::LBrace => "`{`".into(),
        Tok::RBrace => "`}`".into(),
        Tok::Semi => "`;`".into(),
    }
}

/// Parses against the standard level diagram.
pub fn parse_sequence(text: &str) -> Result<Sequence> {
    parse_sequence_with(text, &LevelDiagram::standard())
}

pub fn parse_sequence_with(text: &str, diagram: &LevelDiagram) -> Result<Sequence> {
    let tokens = lex(text);
    let eof = (
        text.lines().count().max(1),
        text.lines().last().map(|l| l.chars().count() + 1).unwrap_or(1),
    );
    let mut parser = Parser {
        tokens,
        pos: 0,
        diagram,
        eof,
    };
    let blocks = parser.block_list(false)?;
    if let Some(t) = parser.peek() {
        let t = t.clone();
        return parser.err(Some(&t), format!("unexpected {}", show(&t.tok)));
    }
    Ok(Sequence {
        name: "sequence".into(),
        blocks,
    })
}

/// Canonical text: one statement per line, four-space indentation inside
/// `repeat`, durations in `us`.
pub fn print_sequence(seq: &Sequence) -> String {
    print_blocks(&seq.blocks)
}

pub fn print_blocks(blocks: &[Block]) -> String {
    let mut out = String::new();
    write_blocks(&mut out, blocks, 0);
    out
}

fn write_blocks(out: &mut String, blocks: &[Block], depth: usize) {
    let pad = "    ".repeat(depth);
    for b in blocks {
        match b {
            Block::Pulse(p) => {
                out.push_str(&pad);
                match p {
                    Pulse::MwPi { label } => {
                        let _ = write!(out, "mw_pi {label};");
                    }
                    Pulse::Laser {
                        label,
                        duration_us,
                        read,
                    } => {
                        let _ = write!(out, "laser {label} {duration_us}us");
                        if let Some(r) = read {
                            let _ = write!(out, " {r}");
                        }
                        out.push(';');
                    }
                    Pulse::Wait { duration_us } => {
                        let _ = write!(out, "wait {duration_us}us;");
                    }
                    Pulse::Swap { duration_us } => {
                        let _ = write!(out, "swap {duration_us}us;");
                    }
                }
                out.push('\n');
            }
            Block::Repeat { count, body } => {
                let _ = writeln!(out, "{pad}repeat {count} {{");
                write_blocks(out, body, depth + 1);
                let _ = writeln!(out, "{pad}}}");
            }
        }
    }
}
