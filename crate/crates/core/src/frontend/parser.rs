use super::ast::*;
use super::token::{Span, Token, TokenKind};
use super::FrontendError;
use crate::ir::Kind;

/// Recursive-descent parser over a token slice.
pub fn parse(tokens: &[Token]) -> Result<Program, FrontendError> {
    let mut p = Parser { tokens, pos: 0 };
    let mut functions = Vec::new();
    while !p.at_end() {
        functions.push(p.function()?);
    }
    Ok(Program { functions })
}

struct Parser<'t> {
    tokens: &'t [Token],
    pos: usize,
}

impl<'t> Parser<'t> {
    fn at_end(&self) -> bool {
        self.pos >= self.tokens.len()
    }

    fn peek(&self) -> Option<&'t Token> {
        self.tokens.get(self.pos)
    }

    fn peek_is(&self, kind: TokenKind, lexeme: &str) -> bool {
        self.peek().is_some_and(|t| t.is(kind, lexeme))
    }

    fn peek_punct(&self, lexeme: &str) -> bool {
        self.peek_is(TokenKind::Punct, lexeme)
    }

    fn peek_keyword(&self, lexeme: &str) -> bool {
        self.peek_is(TokenKind::Keyword, lexeme)
    }

    fn error_span(&self) -> Span {
        match self.peek().or_else(|| self.tokens.last()) {
            Some(t) => t.span,
            None => Span::new(1, 1),
        }
    }

    fn error(&self, expected: &[&str]) -> FrontendError {
        FrontendError::Parse {
            span: self.error_span(),
            expected: expected.iter().map(|s| s.to_string()).collect(),
            found: self
                .peek()
                .map(|t| format!("'{}'", t.lexeme))
                .unwrap_or_else(|| "end of input".into()),
        }
    }

    fn bump(&mut self) -> &'t Token {
        let t = &self.tokens[self.pos];
        self.pos += 1;
        t
    }

    fn expect(&mut self, kind: TokenKind, lexeme: &str) -> Result<&'t Token, FrontendError> {
        if self.peek_is(kind, lexeme) {
            Ok(self.bump())
        } else {
            Err(self.error(&[lexeme]))
        }
    }

    fn expect_punct(&mut self, lexeme: &str) -> Result<(), FrontendError> {
        self.expect(TokenKind::Punct, lexeme).map(|_| ())
    }

    fn ident(&mut self) -> Result<String, FrontendError> {
        match self.peek() {
            Some(t) if t.kind == TokenKind::Ident => Ok(self.bump().lexeme.clone()),
            _ => Err(self.error(&["identifier"])),
        }
    }

    fn kind(&mut self) -> Result<Kind, FrontendError> {
        let expected = ["real", "int", "bool", "vec"];
        match self.peek() {
            Some(t) if t.kind == TokenKind::Ident => match Kind::from_name(&t.lexeme) {
                Some(k) => {
                    self.bump();
                    Ok(k)
                }
                None => Err(self.error(&expected)),
            },
            _ => Err(self.error(&expected)),
        }
    }

    fn function(&mut self) -> Result<FunctionAst, FrontendError> {
        self.expect(TokenKind::Keyword, "fn")?;
        let name = self.ident()?;
        self.expect_punct("(")?;
        let mut params = Vec::new();
        if !self.peek_punct(")") {
            loop {
                let name = self.ident()?;
                let kind = if self.peek_punct(":") {
                    self.bump();
                    Some(self.kind()?)
                } else {
                    None
                };
                params.push(Param { name, kind });
                if self.peek_punct(",") {
                    self.bump();
                } else {
                    break;
                }
            }
        }
        self.expect_punct(")")?;
        let ret = if self.peek_punct("->") {
            self.bump();
            Some(self.kind()?)
        } else {
            None
        };
        let body = self.block()?;
        Ok(FunctionAst {
            name,
            params,
            ret,
            body,
        })
    }

    fn block(&mut self) -> Result<Block, FrontendError> {
        self.expect_punct("{")?;
        let mut stmts = Vec::new();
        while !self.peek_punct("}") {
            if self.at_end() {
                return Err(self.error(&["}"]));
            }
            stmts.push(self.stmt()?);
        }
        self.bump();
        Ok(stmts)
    }

    fn stmt(&mut self) -> Result<Stmt, FrontendError> {
        if self.peek_keyword("let") {
            self.bump();
            let name = self.ident()?;
            self.expect(TokenKind::Operator, "=")?;
            let value = self.expr()?;
            self.expect_punct(";")?;
            return Ok(Stmt::Let { name, value });
        }
        if self.peek_keyword("if") {
            return self.if_stmt();
        }
        if self.peek_keyword("while") {
            self.bump();
            let cond = self.expr()?;
            let body = self.block()?;
            return Ok(Stmt::While { cond, body });
        }
        if self.peek_keyword("for") {
            self.bump();
            let var = self.ident()?;
            self.expect(TokenKind::Keyword, "in")?;
            let start = self.expr()?;
            self.expect_punct(":")?;
            let end = self.expr()?;
            let body = self.block()?;
            return Ok(Stmt::For {
                var,
                start,
                end,
                body,
            });
        }
        if self.peek_keyword("return") {
            self.bump();
            let value = self.expr()?;
            self.expect_punct(";")?;
            return Ok(Stmt::Return(value));
        }
        if self.peek_punct("{") {
            return Ok(Stmt::Block(self.block()?));
        }
        if self.peek_is(TokenKind::Ident, "println")
            && self
                .tokens
                .get(self.pos + 1)
                .is_some_and(|t| t.is(TokenKind::Punct, "("))
        {
            self.bump();
            self.bump();
            let mut args = Vec::new();
            if !self.peek_punct(")") {
                loop {
                    match self.peek() {
                        Some(t) if t.kind == TokenKind::Str => {
                            let lit = &self.bump().lexeme;
                            args.push(PrintArg::Text(lit[1..lit.len() - 1].to_string()));
                        }
                        _ => args.push(PrintArg::Value(self.expr()?)),
                    }
                    if self.peek_punct(",") {
                        self.bump();
                    } else {
                        break;
                    }
                }
            }
            self.expect_punct(")")?;
            self.expect_punct(";")?;
            return Ok(Stmt::Print(args));
        }
        // Assignment forms start with `ident =` or `ident op=`.
        if let (Some(name_tok), Some(op_tok)) = (self.peek(), self.tokens.get(self.pos + 1)) {
            if name_tok.kind == TokenKind::Ident && op_tok.kind == TokenKind::Operator {
                let compound = match op_tok.lexeme.as_str() {
                    "=" => Some(None),
                    "+=" => Some(Some(BinOp::Add)),
                    "-=" => Some(Some(BinOp::Sub)),
                    "*=" => Some(Some(BinOp::Mul)),
                    "/=" => Some(Some(BinOp::Div)),
                    _ => None,
                };
                if let Some(op) = compound {
                    let name = self.bump().lexeme.clone();
                    self.bump();
                    let value = self.expr()?;
                    self.expect_punct(";")?;
                    return Ok(match op {
                        None => Stmt::Assign { name, value },
                        Some(op) => Stmt::CompoundAssign { name, op, value },
                    });
                }
            }
        }
        let e = self.expr()?;
        self.expect_punct(";")?;
        Ok(Stmt::Expr(e))
    }

    fn if_stmt(&mut self) -> Result<Stmt, FrontendError> {
        self.expect(TokenKind::Keyword, "if")?;
        let cond = self.expr()?;
        let then = self.block()?;
        let els = if self.peek_keyword("else") {
            self.bump();
            if self.peek_keyword("if") {
                Some(vec![self.if_stmt()?])
            } else {
                Some(self.block()?)
            }
        } else {
            None
        };
        Ok(Stmt::If { cond, then, els })
    }

    pub fn expr(&mut self) -> Result<Expr, FrontendError> {
        self.binary(0)
    }

    fn binary_op(&self) -> Option<BinOp> {
        let t = self.peek()?;
        if t.kind != TokenKind::Operator {
            return None;
        }
        Some(match t.lexeme.as_str() {
            "+" => BinOp::Add,
            "-" => BinOp::Sub,
            "*" => BinOp::Mul,
            "/" => BinOp::Div,
            "^" => BinOp::Pow,
            "==" => BinOp::Eq,
            "!=" => BinOp::Ne,
            "<" => BinOp::Lt,
            "<=" => BinOp::Le,
            ">" => BinOp::Gt,
            ">=" => BinOp::Ge,
            "&&" => BinOp::And,
            "||" => BinOp::Or,
            _ => return None,
        })
    }

    fn binary(&mut self, min_prec: u8) -> Result<Expr, FrontendError> {
        let mut lhs = self.unary()?;
        while let Some(op) = self.binary_op() {
            let prec = op.precedence();
            if prec < min_prec {
                break;
            }
            self.bump();
            // `^` is right-associative, everything else left-associative.
            let rhs = if op == BinOp::Pow {
                self.binary(prec)?
            } else {
                self.binary(prec + 1)?
            };
            lhs = Expr::Binary {
                op,
                lhs: Box::new(lhs),
                rhs: Box::new(rhs),
            };
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Expr, FrontendError> {
        let op = match self.peek() {
            Some(t) if t.is(TokenKind::Operator, "-") => Some(UnOp::Neg),
            Some(t) if t.is(TokenKind::Operator, "!") => Some(UnOp::Not),
            _ => None,
        };
        match op {
            Some(op) => {
                self.bump();
                let expr = self.binary(UNARY_PRECEDENCE)?;
                Ok(Expr::Unary {
                    op,
                    expr: Box::new(expr),
                })
            }
            None => self.primary(),
        }
    }

    fn primary(&mut self) -> Result<Expr, FrontendError> {
        let expected = ["number", "identifier", "true", "false", "("];
        let Some(t) = self.peek() else {
            return Err(self.error(&expected));
        };
        match t.kind {
            TokenKind::Real => {
                self.bump();
                Ok(Expr::Real(t.lexeme.parse().expect("lexer validated real")))
            }
            TokenKind::Int => {
                self.bump();
                Ok(Expr::Int(t.lexeme.parse().expect("lexer validated int")))
            }
            TokenKind::Keyword if t.lexeme == "true" || t.lexeme == "false" => {
                self.bump();
                Ok(Expr::Bool(t.lexeme == "true"))
            }
            TokenKind::Ident => {
                let name = self.bump().lexeme.clone();
                if self.peek_punct("(") {
                    self.bump();
                    let mut args = Vec::new();
                    if !self.peek_punct(")") {
                        loop {
                            args.push(self.expr()?);
                            if self.peek_punct(",") {
                                self.bump();
                            } else {
                                break;
                            }
                        }
                    }
                    self.expect_punct(")")?;
                    Ok(Expr::Call { callee: name, args })
                } else {
                    Ok(Expr::Var(name))
                }
            }
            TokenKind::Punct if t.lexeme == "(" => {
                self.bump();
                let e = self.expr()?;
                self.expect_punct(")")?;
                Ok(e)
            }
            _ => Err(self.error(&expected)),
        }
    }
}
