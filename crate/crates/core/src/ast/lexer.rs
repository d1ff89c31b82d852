use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) enum Tok {
    Int(i64),
    Ident(String),
    Str(String),
    KwInt,
    KwStr,
    KwIf,
    KwElse,
    KwWhile,
    KwFor,
    KwReturn,
    KwPrint,
    KwBreak,
    KwContinue,
    LParen,
    RParen,
    LBrace,
    RBrace,
    LBracket,
    RBracket,
    Semi,
    Comma,
    Assign,
    /// Binary or unary operator spelled as in the source.
    Op(&'static str),
    Eof,
}

#[derive(Debug, Clone)]
pub(crate) struct Spanned {
    pub tok: Tok,
    pub line: usize,
    pub column: usize,
}

const OPERATORS: [&str; 17] = [
    "&&", "||", "==", "!=", "<=", ">=", "<", ">", "+", "-", "*", "/", "%", "!", "&", "|", "^",
];

pub(crate) fn tokenize(src: &str) -> Result<Vec<Spanned>> {
    let chars: Vec<char> = src.chars().collect();
    let mut out = Vec::new();
    let (mut i, mut line, mut col) = (0usize, 1usize, 1usize);

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
        let ch = chars[i];
        if ch.is_whitespace() {
            bump!();
            continue;
        }
        if ch == '/' && chars.get(i + 1) == Some(&'/') {
            while i < chars.len() && chars[i] != '\n' {
                bump!();
            }
            continue;
        }
        if ch == '/' && chars.get(i + 1) == Some(&'*') {
            let (l0, c0) = (line, col);
            bump!();
            bump!();
            loop {
                if i >= chars.len() {
                    return Err(syntax(l0, c0, "unterminated block comment"));
                }
                if chars[i] == '*' && chars.get(i + 1) == Some(&'/') {
                    bump!();
                    bump!();
                    break;
                }
                bump!();
            }
            continue;
        }

        let (l0, c0) = (line, col);
        let tok = if ch.is_ascii_digit() {
            let start = i;
            while i < chars.len() && chars[i].is_ascii_alphanumeric() {
                bump!();
            }
            let text: String = chars[start..i].iter().collect();
            let value = text
                .parse::<i64>()
                .map_err(|_| syntax(l0, c0, &format!("invalid integer literal `{text}`")))?;
            Tok::Int(value)
        } else if ch.is_ascii_alphabetic() || ch == '_' {
            let start = i;
            while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_') {
                bump!();
            }
            let text: String = chars[start..i].iter().collect();
            match text.as_str() {
                "int" => Tok::KwInt,
                "str" => Tok::KwStr,
                "if" => Tok::KwIf,
                "else" => Tok::KwElse,
                "while" => Tok::KwWhile,
                "for" => Tok::KwFor,
                "return" => Tok::KwReturn,
                "print" => Tok::KwPrint,
                "break" => Tok::KwBreak,
                "continue" => Tok::KwContinue,
                _ => Tok::Ident(text),
            }
        } else if ch == '"' {
            bump!();
            let mut text = String::new();
            loop {
                match chars.get(i) {
                    None | Some('\n') => return Err(syntax(l0, c0, "unterminated string literal")),
                    Some('"') => {
                        bump!();
                        break;
                    }
                    Some('\\') => {
                        bump!();
                        let esc = match chars.get(i) {
                            Some('n') => '\n',
                            Some('t') => '\t',
                            Some('"') => '"',
                            Some('\\') => '\\',
                            _ => return Err(syntax(line, col, "invalid escape sequence")),
                        };
                        text.push(esc);
                        bump!();
                    }
                    Some(&c) => {
                        text.push(c);
                        bump!();
                    }
                }
            }
            Tok::Str(text)
        } else {
            let single = match ch {
                '(' => Some(Tok::LParen),
                ')' => Some(Tok::RParen),
                '{' => Some(Tok::LBrace),
                '}' => Some(Tok::RBrace),
                '[' => Some(Tok::LBracket),
                ']' => Some(Tok::RBracket),
                ';' => Some(Tok::Semi),
                ',' => Some(Tok::Comma),
                '=' if chars.get(i + 1) != Some(&'=') => Some(Tok::Assign),
                _ => None,
            };
            if let Some(tok) = single {
                bump!();
                tok
            } else {
                let rest: String = chars[i..chars.len().min(i + 2)].iter().collect();
                let op = OPERATORS
                    .iter()
                    .find(|op| rest.starts_with(**op))
                    .ok_or_else(|| syntax(l0, c0, &format!("unexpected character `{ch}`")))?;
                for _ in 0..op.len() {
                    bump!();
                }
                if matches!(*op, "&" | "|" | "^") {
                    return Err(Error::Unsupported(format!(
                        "bitwise operator `{op}` at {l0}:{c0}"
                    )));
                }
                Tok::Op(op)
            }
        };
        out.push(Spanned {
            tok,
            line: l0,
            column: c0,
        });
    }
    out.push(Spanned {
        tok: Tok::Eof,
        line,
        column: col,
    });
    Ok(out)
}

pub(crate) fn syntax(line: usize, column: usize, message: &str) -> Error {
    Error::Syntax {
        line,
        column,
        message: message.to_string(),
    }
}
