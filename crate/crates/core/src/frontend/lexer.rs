use super::{FrontendError, Loc};

#[derive(Debug, Clone, PartialEq)]
pub(crate) enum Tok {
    /// Numeric literal, kept as written so integer constants print back unchanged.
    Num(String),
    Ident(String),
    Var(String),
    DoubleColon,
    ColonDash,
    Pipe,
    Comma,
    Dot,
    LParen,
    RParen,
    Not,
    Eof,
}

impl Tok {
    pub(crate) fn describe(&self) -> String {
        match self {
            Tok::Num(s) => format!("number `{s}`"),
            Tok::Ident(s) => format!("identifier `{s}`"),
            Tok::Var(s) => format!("variable `{s}`"),
            Tok::DoubleColon => "`::`".into(),
            Tok::ColonDash => "`:-`".into(),
            Tok::Pipe => "`|`".into(),
            Tok::Comma => "`,`".into(),
            Tok::Dot => "`.`".into(),
            Tok::LParen => "`(`".into(),
            Tok::RParen => "`)`".into(),
            Tok::Not => "`\\+`".into(),
            Tok::Eof => "end of input".into(),
        }
    }
}

pub(crate) fn tokenize(src: &str) -> Result<Vec<(Tok, Loc)>, FrontendError> {
    let chars: Vec<char> = src.chars().collect();
    let mut out = Vec::new();
    let (mut i, mut line, mut col) = (0usize, 1u32, 1u32);

    macro_rules! bump {
        () => {{
            if chars[i] == '\n' {
                line += 1;
                col = 1;
            } else {
                col += 1;
            }
            i += 1;
        }};
    }

    while i < chars.len() {
        let c = chars[i];
        let loc = Loc { line, col };
        if c.is_whitespace() {
            bump!();
            continue;
        }
        if c == '%' || (c == '/' && chars.get(i + 1) == Some(&'/')) {
            while i < chars.len() && chars[i] != '\n' {
                bump!();
            }
            continue;
        }
        let next = chars.get(i + 1).copied();
        let tok = match c {
            ':' if next == Some(':') => {
                bump!();
                bump!();
                Tok::DoubleColon
            }
            ':' if next == Some('-') => {
                bump!();
                bump!();
                Tok::ColonDash
            }
            '\\' if next == Some('+') => {
                bump!();
                bump!();
                Tok::Not
            }
            '|' => {
                bump!();
                Tok::Pipe
            }
            ',' => {
                bump!();
                Tok::Comma
            }
            '.' => {
                bump!();
                Tok::Dot
            }
            '(' => {
                bump!();
                Tok::LParen
            }
            ')' => {
                bump!();
                Tok::RParen
            }
            c if c.is_ascii_digit() || (c == '-' && next.is_some_and(|n| n.is_ascii_digit())) => {
                let mut s = String::new();
                s.push(c);
                bump!();
                while i < chars.len() && chars[i].is_ascii_digit() {
                    s.push(chars[i]);
                    bump!();
                }
                if i + 1 < chars.len() && chars[i] == '.' && chars[i + 1].is_ascii_digit() {
                    s.push('.');
                    bump!();
                    while i < chars.len() && chars[i].is_ascii_digit() {
                        s.push(chars[i]);
                        bump!();
                    }
                }
                if i < chars.len() && (chars[i] == 'e' || chars[i] == 'E') {
                    let mut j = i + 1;
                    if j < chars.len() && (chars[j] == '+' || chars[j] == '-') {
                        j += 1;
                    }
                    if j < chars.len() && chars[j].is_ascii_digit() {
                        while i < j {
                            s.push(chars[i]);
                            bump!();
                        }
                        while i < chars.len() && chars[i].is_ascii_digit() {
                            s.push(chars[i]);
                            bump!();
                        }
                    }
                }
                Tok::Num(s)
            }
            c if c.is_alphabetic() || c == '_' => {
                let mut s = String::new();
                while i < chars.len() && (chars[i].is_alphanumeric() || chars[i] == '_') {
                    s.push(chars[i]);
                    bump!();
                }
                if c.is_uppercase() || c == '_' {
                    Tok::Var(s)
                } else {
                    Tok::Ident(s)
                }
            }
            other => {
                return Err(FrontendError::Syntax {
                    loc,
                    expected: "a token".into(),
                    found: format!("character `{other}`"),
                })
            }
        };
        out.push((tok, loc));
    }
    out.push((Tok::Eof, Loc { line, col }));
    Ok(out)
}
