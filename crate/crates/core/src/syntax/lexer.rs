use crate::diag::{Code, Diagnostic};

#[derive(Debug, Clone, PartialEq)]
pub enum Tok {
    Ident(String),
    /// Unsigned integer digits; the sign is folded in by the parser.
    Int(String),
    Float(f64),
    Str(String),
    LParen,
    RParen,
    LBrack,
    RBrack,
    Comma,
    Colon,
    Semi,
    Underscore,
    Define,  // :=
    Append,  // +=
    Remove,  // -=
    Replace, // <-
    Arrow,   // ->
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
    Plus,
    Minus,
    Star,
    Slash,
    Eof,
}

impl Tok {
    pub fn describe(&self) -> String {
        match self {
            Tok::Ident(s) => format!("`{s}`"),
            Tok::Int(s) => format!("`{s}`"),
            Tok::Float(f) => format!("`{f:?}`"),
            Tok::Str(_) => "string literal".into(),
            Tok::Eof => "end of input".into(),
            other => format!("`{}`", other.symbol()),
        }
    }

    fn symbol(&self) -> &'static str {
        match self {
            Tok::LParen => "(",
            Tok::RParen => ")",
            Tok::LBrack => "[",
            Tok::RBrack => "]",
            Tok::Comma => ",",
            Tok::Colon => ":",
            Tok::Semi => ";",
            Tok::Underscore => "_",
            Tok::Define => ":=",
            Tok::Append => "+=",
            Tok::Remove => "-=",
            Tok::Replace => "<-",
            Tok::Arrow => "->",
            Tok::Eq => "=",
            Tok::Ne => "!=",
            Tok::Lt => "<",
            Tok::Le => "<=",
            Tok::Gt => ">",
            Tok::Ge => ">=",
            Tok::Plus => "+",
            Tok::Minus => "-",
            Tok::Star => "*",
            Tok::Slash => "/",
            _ => "?",
        }
    }
}

#[derive(Debug, Clone)]
pub struct Token {
    pub tok: Tok,
    pub line: u32,
    pub col: u32,
}

fn is_ident_continue(c: char) -> bool {
    c.is_alphanumeric() || c == '_' || c == '\''
}

pub fn lex(src: &str) -> Result<Vec<Token>, Diagnostic> {
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
        let (tl, tc) = (line, col);
        let err = |msg: String| Diagnostic::error(Code::Syntax, msg).at(tl, tc);
        if c.is_whitespace() {
            bump!();
            continue;
        }
        if c == '/' && chars.get(i + 1) == Some(&'/') {
            while i < chars.len() && chars[i] != '\n' {
                bump!();
            }
            continue;
        }
        if c == '{' {
            while i < chars.len() && chars[i] != '}' {
                bump!();
            }
            if i == chars.len() {
                return Err(err("unterminated block comment".into()));
            }
            bump!();
            continue;
        }
        let next = chars.get(i + 1).copied();
        let two = |t: Tok| (t, 2usize);
        let one = |t: Tok| (t, 1usize);
        let simple = match c {
            '(' => Some(one(Tok::LParen)),
            ')' => Some(one(Tok::RParen)),
            '[' => Some(one(Tok::LBrack)),
            ']' => Some(one(Tok::RBrack)),
            ',' => Some(one(Tok::Comma)),
            ';' => Some(one(Tok::Semi)),
            '*' => Some(one(Tok::Star)),
            '/' => Some(one(Tok::Slash)),
            '=' => Some(one(Tok::Eq)),
            '≠' => Some(one(Tok::Ne)),
            '≤' => Some(one(Tok::Le)),
            '≥' => Some(one(Tok::Ge)),
            ':' if next == Some('=') => Some(two(Tok::Define)),
            ':' => Some(one(Tok::Colon)),
            '+' if next == Some('=') => Some(two(Tok::Append)),
            '+' => Some(one(Tok::Plus)),
            '-' if next == Some('=') => Some(two(Tok::Remove)),
            '-' if next == Some('>') => Some(two(Tok::Arrow)),
            '-' => Some(one(Tok::Minus)),
            '<' if next == Some('-') => Some(two(Tok::Replace)),
            '<' if next == Some('=') => Some(two(Tok::Le)),
            '<' => Some(one(Tok::Lt)),
            '>' if next == Some('=') => Some(two(Tok::Ge)),
            '>' => Some(one(Tok::Gt)),
            '!' if next == Some('=') => Some(two(Tok::Ne)),
            '_' if !next.is_some_and(is_ident_continue) => Some(one(Tok::Underscore)),
            _ => None,
        };
        if let Some((tok, n)) = simple {
            for _ in 0..n {
                bump!();
            }
            out.push(Token { tok, line: tl, col: tc });
            continue;
        }
        if c.is_ascii_digit() {
            let start = i;
            while i < chars.len() && chars[i].is_ascii_digit() {
                bump!();
            }
            let mut is_float = false;
            if i + 1 < chars.len() && chars[i] == '.' && chars[i + 1].is_ascii_digit() {
                is_float = true;
                bump!();
                while i < chars.len() && chars[i].is_ascii_digit() {
                    bump!();
                }
            }
            if i < chars.len() && (chars[i] == 'e' || chars[i] == 'E') {
                let mut j = i + 1;
                if j < chars.len() && (chars[j] == '+' || chars[j] == '-') {
                    j += 1;
                }
                if j < chars.len() && chars[j].is_ascii_digit() {
                    is_float = true;
                    while i < j {
                        bump!();
                    }
                    while i < chars.len() && chars[i].is_ascii_digit() {
                        bump!();
                    }
                }
            }
            let text: String = chars[start..i].iter().collect();
            let tok = if is_float {
                Tok::Float(text.parse().map_err(|_| err(format!("bad number `{text}`")))?)
            } else {
                Tok::Int(text)
            };
            out.push(Token { tok, line: tl, col: tc });
            continue;
        }
        if c.is_alphabetic() {
            let start = i;
            while i < chars.len() && is_ident_continue(chars[i]) {
                bump!();
            }
            out.push(Token {
                tok: Tok::Ident(chars[start..i].iter().collect()),
                line: tl,
                col: tc,
            });
            continue;
        }
        if c == '"' {
            bump!();
            let mut s = String::new();
            loop {
                if i >= chars.len() {
                    return Err(err("unterminated string literal".into()));
                }
                let ch = chars[i];
                bump!();
                match ch {
                    '"' => break,
                    '\\' => {
                        if i >= chars.len() {
                            return Err(err("unterminated string literal".into()));
                        }
                        let e = chars[i];
                        bump!();
                        s.push(match e {
                            'n' => '\n',
                            't' => '\t',
                            '"' => '"',
                            '\\' => '\\',
                            other => return Err(err(format!("unknown escape `\\{other}`"))),
                        });
                    }
                    ch => s.push(ch),
                }
            }
            out.push(Token { tok: Tok::Str(s), line: tl, col: tc });
            continue;
        }
        return Err(err(format!("unexpected character `{}`", c.escape_debug())));
    }
    out.push(Token {
        tok: Tok::Eof,
        line,
        col,
    });
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(s: &str) -> Vec<Tok> {
        lex(s).unwrap().into_iter().map(|t| t.tok).collect()
    }

    #[test]
    fn primes_belong_to_identifiers() {
        assert_eq!(
            toks("b'=b''"),
            vec![
                Tok::Ident("b'".into()),
                Tok::Eq,
                Tok::Ident("b''".into()),
                Tok::Eof
            ]
        );
    }

    #[test]
    fn comments_are_skipped() {
        assert_eq!(
            toks("// line\nx { block\n comment } y"),
            vec![Tok::Ident("x".into()), Tok::Ident("y".into()), Tok::Eof]
        );
    }

    #[test]
    fn exponent_floats() {
        assert_eq!(toks("1e-7"), vec![Tok::Float(1e-7), Tok::Eof]);
        assert_eq!(toks("2.5"), vec![Tok::Float(2.5), Tok::Eof]);
        assert_eq!(toks("3e"), vec![Tok::Int("3".into()), Tok::Ident("e".into()), Tok::Eof]);
    }

    #[test]
    fn positions_are_one_based() {
        let t = lex("a\n  b").unwrap();
        assert_eq!((t[1].line, t[1].col), (2, 3));
    }

    #[test]
    fn stray_character_is_reported() {
        let d = lex("x # y").unwrap_err();
        assert_eq!((d.line, d.column), (1, 3));
    }
}
