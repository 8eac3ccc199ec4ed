use super::token::{Span, Token, TokenKind, KEYWORDS};
use super::FrontendError;

const OPERATORS: &[&str] = &[
    "+=", "-=", "*=", "/=", "==", "!=", "<=", ">=", "&&", "||", "->", "+", "-", "*", "/", "^",
    "<", ">", "=", "!",
];

const PUNCT: &[char] = &['(', ')', '{', '}', ',', ';', ':'];

struct Cursor<'a> {
    src: &'a str,
    pos: usize,
    line: u32,
    column: u32,
}

impl<'a> Cursor<'a> {
    fn peek(&self) -> Option<char> {
        self.src[self.pos..].chars().next()
    }

    fn bump(&mut self) -> Option<char> {
        let c = self.peek()?;
        self.pos += c.len_utf8();
        if c == '\n' {
            self.line += 1;
            self.column = 1;
        } else {
            self.column += 1;
        }
        Some(c)
    }

    fn span(&self) -> Span {
        Span::new(self.line, self.column)
    }
}

/// Split source text into tokens. Whitespace and `#` comments are dropped.
pub fn tokenize(source: &str) -> Result<Vec<Token>, FrontendError> {
    let mut cur = Cursor {
        src: source,
        pos: 0,
        line: 1,
        column: 1,
    };
    let mut tokens = Vec::new();
    while let Some(c) = cur.peek() {
        if c.is_whitespace() {
            cur.bump();
            continue;
        }
        if c == '#' {
            while let Some(c) = cur.peek() {
                if c == '\n' {
                    break;
                }
                cur.bump();
            }
            continue;
        }
        let span = cur.span();
        let start = cur.pos;
        let kind = if c.is_ascii_alphabetic() || c == '_' {
            while matches!(cur.peek(), Some(c) if c.is_ascii_alphanumeric() || c == '_') {
                cur.bump();
            }
            if KEYWORDS.contains(&&source[start..cur.pos]) {
                TokenKind::Keyword
            } else {
                TokenKind::Ident
            }
        } else if c.is_ascii_digit() {
            lex_number(&mut cur, span)?
        } else if c == '"' {
            cur.bump();
            loop {
                match cur.bump() {
                    Some('"') => break,
                    Some('\n') | None => {
                        return Err(FrontendError::Lex {
                            span,
                            message: "unterminated string literal".into(),
                        })
                    }
                    Some(_) => {}
                }
            }
            TokenKind::Str
        } else if PUNCT.contains(&c) {
            cur.bump();
            TokenKind::Punct
        } else if let Some(op) = OPERATORS.iter().find(|op| source[start..].starts_with(**op)) {
            for _ in 0..op.len() {
                cur.bump();
            }
            // `->` is punctuation in the grammar even though it lexes like an operator.
            if *op == "->" {
                TokenKind::Punct
            } else {
                TokenKind::Operator
            }
        } else {
            return Err(FrontendError::Lex {
                span,
                message: format!("illegal character {c:?}"),
            });
        };
        tokens.push(Token {
            kind,
            lexeme: source[start..cur.pos].to_string(),
            span,
            offset: start,
        });
    }
    Ok(tokens)
}

fn lex_number(cur: &mut Cursor<'_>, span: Span) -> Result<TokenKind, FrontendError> {
    let start = cur.pos;
    let malformed = |msg: &str| FrontendError::Lex {
        span,
        message: format!("malformed numeric literal: {msg}"),
    };
    let digits = |cur: &mut Cursor<'_>| {
        let mut n = 0;
        while matches!(cur.peek(), Some(c) if c.is_ascii_digit()) {
            cur.bump();
            n += 1;
        }
        n
    };
    digits(cur);
    let mut real = false;
    if cur.peek() == Some('.') {
        cur.bump();
        real = true;
        if digits(cur) == 0 {
            return Err(malformed("expected digits after '.'"));
        }
    }
    if matches!(cur.peek(), Some('e' | 'E')) {
        cur.bump();
        real = true;
        if matches!(cur.peek(), Some('+' | '-')) {
            cur.bump();
        }
        if digits(cur) == 0 {
            return Err(malformed("expected exponent digits"));
        }
    }
    if matches!(cur.peek(), Some(c) if c.is_ascii_alphabetic() || c == '_') {
        return Err(malformed("trailing identifier characters"));
    }
    let text = &cur.src[start..cur.pos];
    if real {
        text.parse::<f64>().map_err(|_| malformed(text))?;
        Ok(TokenKind::Real)
    } else {
        text.parse::<i64>().map_err(|_| malformed("integer out of range"))?;
        Ok(TokenKind::Int)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn kinds(src: &str) -> Vec<(TokenKind, String)> {
        tokenize(src)
            .unwrap()
            .into_iter()
            .map(|t| (t.kind, t.lexeme))
            .collect()
    }

    #[test]
    fn simple_expression() {
        assert_eq!(
            kinds("x + 1.0"),
            vec![
                (TokenKind::Ident, "x".into()),
                (TokenKind::Operator, "+".into()),
                (TokenKind::Real, "1.0".into()),
            ]
        );
    }

    #[test]
    fn empty_input() {
        assert!(tokenize("").unwrap().is_empty());
        assert!(tokenize("   # only a comment\n").unwrap().is_empty());
    }

    #[test]
    fn malformed_exponent() {
        match tokenize("1.0e") {
            Err(FrontendError::Lex { span, .. }) => assert_eq!(span, Span::new(1, 1)),
            other => panic!("expected lex error, got {other:?}"),
        }
    }

    #[test]
    fn illegal_character_reports_span() {
        match tokenize("x +\n  $") {
            Err(FrontendError::Lex { span, .. }) => assert_eq!(span, Span::new(2, 3)),
            other => panic!("expected lex error, got {other:?}"),
        }
    }

    #[test]
    fn exponent_without_dot_is_real() {
        assert_eq!(kinds("1e-8")[0], (TokenKind::Real, "1e-8".into()));
        assert_eq!(kinds("19")[0], (TokenKind::Int, "19".into()));
    }

    #[test]
    fn multi_char_operators_and_arrow() {
        let toks = kinds("a += b -> c <= d");
        assert_eq!(toks[1], (TokenKind::Operator, "+=".into()));
        assert_eq!(toks[3], (TokenKind::Punct, "->".into()));
        assert_eq!(toks[5], (TokenKind::Operator, "<=".into()));
    }

    #[test]
    fn crlf_is_whitespace() {
        let toks = tokenize("let x\r\n= 1;").unwrap();
        assert_eq!(toks[2].span, Span::new(2, 1));
    }
}
