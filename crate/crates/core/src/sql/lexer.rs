use super::SqlError;

#[derive(Debug, Clone, PartialEq)]
pub(crate) enum Tok {
    Word(String),
    /// Backtick- or bracket-quoted identifier.
    Quoted(String),
    Number(String),
    Str(String),
    Sym(&'static str),
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Token {
    pub tok: Tok,
    pub pos: usize,
}

const SYMBOLS: [&str; 15] = [
    "<>", "!=", "<=", ">=", "==", "=", "<", ">", "(", ")", ",", ".", "*", "+", "-",
];

pub(crate) fn tokenize(input: &str) -> Result<Vec<Token>, SqlError> {
    let bytes = input.as_bytes();
    let mut tokens = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i] as char;
        if c.is_ascii_whitespace() {
            i += 1;
            continue;
        }
        let start = i;
        if c == '\'' || c == '"' {
            let (text, next) = quoted(input, i, c)?;
            tokens.push(Token {
                tok: Tok::Str(text),
                pos: start,
            });
            i = next;
        } else if c == '`' || c == '[' {
            let close = if c == '`' { '`' } else { ']' };
            let end = input[i + 1..].find(close).ok_or(SqlError::Syntax {
                pos: start,
                message: "unterminated quoted identifier".into(),
            })?;
            tokens.push(Token {
                tok: Tok::Quoted(input[i + 1..i + 1 + end].to_string()),
                pos: start,
            });
            i += end + 2;
        } else if c.is_ascii_digit()
            || (c == '.' && bytes.get(i + 1).is_some_and(u8::is_ascii_digit))
        {
            while i < bytes.len() && (bytes[i].is_ascii_digit() || bytes[i] == b'.') {
                i += 1;
            }
            if i < bytes.len() && (bytes[i] == b'e' || bytes[i] == b'E') {
                let mut j = i + 1;
                if j < bytes.len() && (bytes[j] == b'+' || bytes[j] == b'-') {
                    j += 1;
                }
                if j < bytes.len() && bytes[j].is_ascii_digit() {
                    i = j;
                    while i < bytes.len() && bytes[i].is_ascii_digit() {
                        i += 1;
                    }
                }
            }
            tokens.push(Token {
                tok: Tok::Number(input[start..i].to_string()),
                pos: start,
            });
        } else if c.is_alphabetic() || c == '_' || !c.is_ascii() {
            while i < bytes.len() {
                let ch = input[i..].chars().next().unwrap();
                if ch.is_alphanumeric() || ch == '_' || !ch.is_ascii() {
                    i += ch.len_utf8();
                } else {
                    break;
                }
            }
            tokens.push(Token {
                tok: Tok::Word(input[start..i].to_string()),
                pos: start,
            });
        } else if c == ';' {
            i += 1;
            if input[i..].trim().is_empty() {
                break;
            }
            return Err(SqlError::Syntax {
                pos: start,
                message: "multiple statements are not supported".into(),
            });
        } else if c == '/' {
            tokens.push(Token {
                tok: Tok::Sym("/"),
                pos: start,
            });
            i += 1;
        } else if let Some(sym) = SYMBOLS.iter().find(|s| input[i..].starts_with(**s)) {
            let sym = if *sym == "==" { "=" } else { sym };
            tokens.push(Token {
                tok: Tok::Sym(sym),
                pos: start,
            });
            i += if sym == "=" && input[i..].starts_with("==") {
                2
            } else {
                sym.len()
            };
        } else {
            return Err(SqlError::Syntax {
                pos: start,
                message: format!("unexpected character `{c}`"),
            });
        }
    }
    Ok(tokens)
}

fn quoted(input: &str, start: usize, quote: char) -> Result<(String, usize), SqlError> {
    let mut out = String::new();
    let mut chars = input[start + 1..].char_indices().peekable();
    while let Some((off, ch)) = chars.next() {
        if ch == quote {
            if chars.peek().is_some_and(|&(_, n)| n == quote) {
                out.push(quote);
                chars.next();
                continue;
            }
            return Ok((out, start + 1 + off + 1));
        }
        out.push(ch);
    }
    Err(SqlError::Syntax {
        pos: start,
        message: "unterminated string literal".into(),
    })
}
