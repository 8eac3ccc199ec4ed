//! Line-oriented textual form of the IR (`.dpir`).
//!
//! ```text
//! ; dpir v1
//! fn f(%0: real) {
//!   %1: real = const 2.0
//!   %2: real = pow %0, %1
//!   return %2
//! }
//! ```

use std::fmt::Write;

use thiserror::Error;

use super::{Callee, Instr, IrFunction, IrModule, Kind, Literal, PrimOp, PrintPart, Region, VarId};

pub const IR_HEADER: &str = "; dpir v1";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("IR parse error at line {line}: {message}")]
pub struct IrParseError {
    pub line: usize,
    pub message: String,
}

pub fn print_ir(module: &IrModule) -> String {
    let mut out = String::new();
    out.push_str(IR_HEADER);
    out.push('\n');
    for f in module.functions() {
        out.push_str(&print_function(f));
    }
    out
}

pub fn print_function(f: &IrFunction) -> String {
    let mut out = String::new();
    let params: Vec<String> = f.params.iter().map(|p| typed(f, *p)).collect();
    writeln!(out, "fn {}({}) {{", f.name, params.join(", ")).unwrap();
    for i in &f.body.instrs {
        instr(&mut out, f, i, 1);
    }
    let results: Vec<String> = f.results().iter().map(|r| r.to_string()).collect();
    if results.is_empty() {
        out.push_str("  return\n");
    } else {
        writeln!(out, "  return {}", results.join(", ")).unwrap();
    }
    out.push_str("}\n");
    out
}

fn typed(f: &IrFunction, v: VarId) -> String {
    format!("{v}: {}", f.kind(v))
}

fn pad(out: &mut String, depth: usize) {
    for _ in 0..depth {
        out.push_str("  ");
    }
}

fn list(vars: &[VarId]) -> String {
    vars.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(", ")
}

fn lhs(f: &IrFunction, defs: &[VarId]) -> String {
    if defs.is_empty() {
        String::new()
    } else {
        let parts: Vec<String> = defs.iter().map(|d| typed(f, *d)).collect();
        format!("{} = ", parts.join(", "))
    }
}

fn literal(l: &Literal) -> String {
    match l {
        Literal::Real(v) => format!("{v:?}"),
        Literal::Int(v) => v.to_string(),
        Literal::Bool(v) => v.to_string(),
        Literal::Zero => "zero".into(),
    }
}

fn region_body(out: &mut String, f: &IrFunction, r: &Region, depth: usize) {
    for i in &r.instrs {
        instr(out, f, i, depth);
    }
    if !r.yields.is_empty() {
        pad(out, depth);
        writeln!(out, "yield {}", list(&r.yields)).unwrap();
    }
}

fn instr(out: &mut String, f: &IrFunction, i: &Instr, depth: usize) {
    pad(out, depth);
    match i {
        Instr::Const { dst, value } => {
            writeln!(out, "{}const {}", lhs(f, &[*dst]), literal(value)).unwrap()
        }
        Instr::Prim { dst, op, args } => {
            writeln!(out, "{}{} {}", lhs(f, &[*dst]), op, list(args)).unwrap()
        }
        Instr::Call { dst, callee, args } => {
            writeln!(out, "{}call @{}({})", lhs(f, &[*dst]), callee, list(args)).unwrap()
        }
        Instr::Partial { dst, callee, args } => match callee {
            Callee::Prim(op) => writeln!(out, "{}partial {} {}", lhs(f, &[*dst]), op, list(args)).unwrap(),
            Callee::Func(name) => {
                writeln!(out, "{}partial @{}({})", lhs(f, &[*dst]), name, list(args)).unwrap()
            }
        },
        Instr::If {
            cond,
            then,
            els,
            dsts,
        } => {
            writeln!(out, "{}if {} {{", lhs(f, dsts), cond).unwrap();
            region_body(out, f, then, depth + 1);
            pad(out, depth);
            out.push_str("} else {\n");
            region_body(out, f, els, depth + 1);
            pad(out, depth);
            out.push_str("}\n");
        }
        Instr::While {
            carried,
            inits,
            cond,
            body,
            dsts,
        } => {
            let binds: Vec<String> = carried
                .iter()
                .zip(inits)
                .map(|(c, i)| format!("{} = {}", typed(f, *c), i))
                .collect();
            writeln!(out, "{}while ({}) {{", lhs(f, dsts), binds.join(", ")).unwrap();
            region_body(out, f, cond, depth + 1);
            pad(out, depth);
            out.push_str("} do {\n");
            region_body(out, f, body, depth + 1);
            pad(out, depth);
            out.push_str("}\n");
        }
        Instr::Print { parts } => {
            let ps: Vec<String> = parts
                .iter()
                .map(|p| match p {
                    PrintPart::Text(t) => format!("\"{t}\""),
                    PrintPart::Var(v) => v.to_string(),
                })
                .collect();
            writeln!(out, "print {}", ps.join(", ")).unwrap();
        }
        Instr::PushBranch { cond } => writeln!(out, "push_branch {cond}").unwrap(),
        Instr::PushTrips { count } => writeln!(out, "push_trips {count}").unwrap(),
        Instr::PopBranch { dst } => writeln!(out, "{}pop_branch", lhs(f, &[*dst])).unwrap(),
        Instr::PopTrips { dst } => writeln!(out, "{}pop_trips", lhs(f, &[*dst])).unwrap(),
        Instr::Back { z, dsts } => writeln!(out, "{}back {}", lhs(f, dsts), z).unwrap(),
    }
}

// ---------------------------------------------------------------------------
// Parsing

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Var(u32),
    Func(String),
    Word(String),
    Str(String),
    Sym(char),
}

fn lex_line(line: &str, lineno: usize) -> Result<Vec<Tok>, IrParseError> {
    let err = |m: String| IrParseError { line: lineno, message: m };
    let mut toks = Vec::new();
    let mut chars = line.char_indices().peekable();
    let is_word = |c: char| !c.is_whitespace() && !":=,(){}\"%@".contains(c);
    while let Some(&(i, c)) = chars.peek() {
        if c.is_whitespace() {
            chars.next();
        } else if ":=,(){}".contains(c) {
            chars.next();
            toks.push(Tok::Sym(c));
        } else if c == '"' {
            chars.next();
            let start = i + 1;
            let mut end = None;
            for (j, d) in chars.by_ref() {
                if d == '"' {
                    end = Some(j);
                    break;
                }
            }
            let end = end.ok_or_else(|| err("unterminated string".into()))?;
            toks.push(Tok::Str(line[start..end].to_string()));
        } else if c == '%' || c == '@' {
            chars.next();
            let start = i + 1;
            let mut end = line.len();
            while let Some(&(j, d)) = chars.peek() {
                if !is_word(d) {
                    end = j;
                    break;
                }
                chars.next();
            }
            let word = &line[start..end];
            if c == '%' {
                let n = word
                    .parse()
                    .map_err(|_| err(format!("bad variable '%{word}'")))?;
                toks.push(Tok::Var(n));
            } else {
                toks.push(Tok::Func(word.to_string()));
            }
        } else {
            let start = i;
            let mut end = line.len();
            while let Some(&(j, d)) = chars.peek() {
                if !is_word(d) {
                    end = j;
                    break;
                }
                chars.next();
            }
            toks.push(Tok::Word(line[start..end].to_string()));
        }
    }
    Ok(toks)
}

struct LineCursor<'a> {
    lines: Vec<(usize, &'a str)>,
    pos: usize,
    last_line: usize,
}

struct TokCursor {
    toks: Vec<Tok>,
    pos: usize,
    line: usize,
}

impl TokCursor {
    fn err(&self, message: impl Into<String>) -> IrParseError {
        IrParseError {
            line: self.line,
            message: message.into(),
        }
    }

    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos)
    }

    fn next(&mut self) -> Option<Tok> {
        let t = self.toks.get(self.pos).cloned();
        self.pos += 1;
        t
    }

    fn sym(&mut self, c: char) -> Result<(), IrParseError> {
        match self.next() {
            Some(Tok::Sym(d)) if d == c => Ok(()),
            other => Err(self.err(format!("expected '{c}', found {other:?}"))),
        }
    }

    fn eat_sym(&mut self, c: char) -> bool {
        if self.peek() == Some(&Tok::Sym(c)) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn var(&mut self) -> Result<VarId, IrParseError> {
        match self.next() {
            Some(Tok::Var(n)) => Ok(VarId(n)),
            other => Err(self.err(format!("expected variable, found {other:?}"))),
        }
    }

    fn word(&mut self) -> Result<String, IrParseError> {
        match self.next() {
            Some(Tok::Word(w)) => Ok(w),
            other => Err(self.err(format!("expected word, found {other:?}"))),
        }
    }

    fn var_list(&mut self) -> Result<Vec<VarId>, IrParseError> {
        let mut out = Vec::new();
        if !matches!(self.peek(), Some(Tok::Var(_))) {
            return Ok(out);
        }
        loop {
            out.push(self.var()?);
            if !self.eat_sym(',') {
                break;
            }
        }
        Ok(out)
    }

    fn done(&self) -> Result<(), IrParseError> {
        match self.peek() {
            None => Ok(()),
            Some(t) => Err(self.err(format!("unexpected trailing token {t:?}"))),
        }
    }
}

struct FnBuilder {
    kinds: Vec<Option<Kind>>,
}

impl FnBuilder {
    fn typed_var(&mut self, tc: &mut TokCursor) -> Result<VarId, IrParseError> {
        let v = tc.var()?;
        tc.sym(':')?;
        let w = tc.word()?;
        let k = Kind::from_name(&w).ok_or_else(|| tc.err(format!("unknown kind '{w}'")))?;
        if self.kinds.len() <= v.index() {
            self.kinds.resize(v.index() + 1, None);
        }
        self.kinds[v.index()] = Some(k);
        Ok(v)
    }
}

impl<'a> LineCursor<'a> {
    fn next(&mut self) -> Result<TokCursor, IrParseError> {
        let Some(&(line, text)) = self.lines.get(self.pos) else {
            return Err(IrParseError {
                line: self.last_line,
                message: "unexpected end of input".into(),
            });
        };
        self.pos += 1;
        Ok(TokCursor {
            toks: lex_line(text, line)?,
            pos: 0,
            line,
        })
    }

    fn at_end(&self) -> bool {
        self.pos >= self.lines.len()
    }
}

pub fn parse_ir(text: &str) -> Result<IrModule, IrParseError> {
    let lines: Vec<(usize, &str)> = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty())
        .collect();
    let last_line = text.lines().count().max(1);
    let Some((first_line, first)) = lines.first().copied() else {
        return Err(IrParseError {
            line: 1,
            message: "missing header".into(),
        });
    };
    if first != IR_HEADER {
        return Err(IrParseError {
            line: first_line,
            message: format!("expected header '{IR_HEADER}'"),
        });
    }
    let mut lc = LineCursor {
        lines,
        pos: 1,
        last_line,
    };
    let mut module = IrModule::default();
    while !lc.at_end() {
        module.push(parse_function(&mut lc)?);
    }
    Ok(module)
}

fn parse_function(lc: &mut LineCursor<'_>) -> Result<IrFunction, IrParseError> {
    let mut tc = lc.next()?;
    if tc.word()? != "fn" {
        return Err(tc.err("expected 'fn'"));
    }
    let name = tc.word()?;
    tc.sym('(')?;
    let mut fb = FnBuilder { kinds: Vec::new() };
    let mut params = Vec::new();
    if !tc.eat_sym(')') {
        loop {
            params.push(fb.typed_var(&mut tc)?);
            if tc.eat_sym(')') {
                break;
            }
            tc.sym(',')?;
        }
    }
    tc.sym('{')?;
    tc.done()?;
    let mut instrs = Vec::new();
    let results = loop {
        let mut tc = lc.next()?;
        if tc.peek() == Some(&Tok::Word("return".into())) {
            tc.next();
            let results = tc.var_list()?;
            tc.done()?;
            break results;
        }
        instrs.push(parse_instr(lc, &mut fb, tc)?);
    };
    let mut tc = lc.next()?;
    tc.sym('}')?;
    tc.done()?;
    let line = tc.line;
    let kinds = fb
        .kinds
        .into_iter()
        .enumerate()
        .map(|(i, k)| {
            k.ok_or_else(|| IrParseError {
                line,
                message: format!("%{i} of function '{name}' has no definition"),
            })
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(IrFunction {
        name,
        params,
        body: Region {
            instrs,
            yields: results,
        },
        kinds,
    })
}

/// Parse region lines up to (and including) a closing line starting with `}`.
/// Returns the region and the tokens after the `}`.
fn parse_region(lc: &mut LineCursor<'_>, fb: &mut FnBuilder) -> Result<(Region, TokCursor), IrParseError> {
    let mut region = Region::default();
    loop {
        let mut tc = lc.next()?;
        match tc.peek() {
            Some(Tok::Sym('}')) => {
                tc.next();
                return Ok((region, tc));
            }
            Some(Tok::Word(w)) if w == "yield" => {
                tc.next();
                region.yields = tc.var_list()?;
                tc.done()?;
            }
            _ => {
                if !region.yields.is_empty() {
                    return Err(tc.err("instruction after yield"));
                }
                region.instrs.push(parse_instr(lc, fb, tc)?);
            }
        }
    }
}

fn parse_instr(lc: &mut LineCursor<'_>, fb: &mut FnBuilder, mut tc: TokCursor) -> Result<Instr, IrParseError> {
    let mut defs = Vec::new();
    if matches!(tc.peek(), Some(Tok::Var(_))) {
        loop {
            defs.push(fb.typed_var(&mut tc)?);
            if tc.eat_sym('=') {
                break;
            }
            tc.sym(',')?;
        }
    }
    let single = |tc: &TokCursor, defs: &[VarId]| -> Result<VarId, IrParseError> {
        match defs {
            [d] => Ok(*d),
            _ => Err(tc.err(format!("expected exactly one result, found {}", defs.len()))),
        }
    };
    let head = tc.word()?;
    let instr = match head.as_str() {
        "const" => {
            let dst = single(&tc, &defs)?;
            let w = tc.word()?;
            let value = match w.as_str() {
                "true" => Literal::Bool(true),
                "false" => Literal::Bool(false),
                "zero" => Literal::Zero,
                _ if w.contains(['.', 'e', 'E']) || w.contains("inf") || w.contains("NaN") => {
                    Literal::Real(w.parse().map_err(|_| tc.err(format!("bad real literal '{w}'")))?)
                }
                _ => Literal::Int(w.parse().map_err(|_| tc.err(format!("bad literal '{w}'")))?),
            };
            Instr::Const { dst, value }
        }
        "call" => {
            let dst = single(&tc, &defs)?;
            let callee = match tc.next() {
                Some(Tok::Func(n)) => n,
                other => return Err(tc.err(format!("expected @function, found {other:?}"))),
            };
            tc.sym('(')?;
            let args = tc.var_list()?;
            tc.sym(')')?;
            Instr::Call { dst, callee, args }
        }
        "partial" => {
            let dst = single(&tc, &defs)?;
            match tc.next() {
                Some(Tok::Func(n)) => {
                    tc.sym('(')?;
                    let args = tc.var_list()?;
                    tc.sym(')')?;
                    Instr::Partial {
                        dst,
                        callee: Callee::Func(n),
                        args,
                    }
                }
                Some(Tok::Word(w)) => {
                    let op = PrimOp::from_name(&w).ok_or_else(|| tc.err(format!("unknown primitive '{w}'")))?;
                    Instr::Partial {
                        dst,
                        callee: Callee::Prim(op),
                        args: tc.var_list()?,
                    }
                }
                other => return Err(tc.err(format!("expected callee, found {other:?}"))),
            }
        }
        "if" => {
            let cond = tc.var()?;
            tc.sym('{')?;
            tc.done()?;
            let (then, mut rest) = parse_region(lc, fb)?;
            if rest.word()? != "else" {
                return Err(rest.err("expected '} else {'"));
            }
            rest.sym('{')?;
            rest.done()?;
            let (els, rest) = parse_region(lc, fb)?;
            rest.done()?;
            Instr::If {
                cond,
                then,
                els,
                dsts: defs,
            }
        }
        "while" => {
            tc.sym('(')?;
            let (mut carried, mut inits) = (Vec::new(), Vec::new());
            if !tc.eat_sym(')') {
                loop {
                    carried.push(fb.typed_var(&mut tc)?);
                    tc.sym('=')?;
                    inits.push(tc.var()?);
                    if tc.eat_sym(')') {
                        break;
                    }
                    tc.sym(',')?;
                }
            }
            tc.sym('{')?;
            tc.done()?;
            let (cond, mut rest) = parse_region(lc, fb)?;
            if rest.word()? != "do" {
                return Err(rest.err("expected '} do {'"));
            }
            rest.sym('{')?;
            rest.done()?;
            let (body, rest) = parse_region(lc, fb)?;
            rest.done()?;
            Instr::While {
                carried,
                inits,
                cond,
                body,
                dsts: defs,
            }
        }
        "print" => {
            let mut parts = Vec::new();
            while let Some(t) = tc.next() {
                match t {
                    Tok::Str(s) => parts.push(PrintPart::Text(s)),
                    Tok::Var(v) => parts.push(PrintPart::Var(VarId(v))),
                    other => return Err(tc.err(format!("bad print operand {other:?}"))),
                }
                if !tc.eat_sym(',') {
                    break;
                }
            }
            Instr::Print { parts }
        }
        "push_branch" => Instr::PushBranch { cond: tc.var()? },
        "push_trips" => Instr::PushTrips { count: tc.var()? },
        "pop_branch" => Instr::PopBranch {
            dst: single(&tc, &defs)?,
        },
        "pop_trips" => Instr::PopTrips {
            dst: single(&tc, &defs)?,
        },
        "back" => Instr::Back {
            z: tc.var()?,
            dsts: defs,
        },
        other => {
            let op = PrimOp::from_name(other).ok_or_else(|| tc.err(format!("unknown instruction '{other}'")))?;
            Instr::Prim {
                dst: single(&tc, &defs)?,
                op,
                args: tc.var_list()?,
            }
        }
    };
    if !matches!(instr, Instr::If { .. } | Instr::While { .. }) {
        tc.done()?;
    }
    Ok(instr)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_module_is_header_only() {
        let text = print_ir(&IrModule::default());
        assert_eq!(text, format!("{IR_HEADER}\n"));
        assert_eq!(parse_ir(&text).unwrap(), IrModule::default());
    }

    #[test]
    fn truncated_text_reports_last_line() {
        let text = "; dpir v1\nfn f(%0: real) {\n  %1: real = neg %0\n";
        let err = parse_ir(text).unwrap_err();
        assert_eq!(err.line, 3);
    }

    #[test]
    fn handwritten_round_trip() {
        let text = "\
; dpir v1
fn f(%0: real, %1: int) {
  %2: bool = const true
  %3: real = if %2 {
    %4: real = neg %0
    yield %4
  } else {
    yield %0
  }
  %5: int, %6: real = while (%7: int = %1, %8: real = %3) {
    %9: int = const 0
    %10: bool = gt %7, %9
    yield %10
  } do {
    %11: int = const 1
    %12: int = sub %7, %11
    %13: real = partial sin %8
    print \"k=\", %12
    yield %12, %13
  }
  %14: real = const -1e-8
  %15: real = call @f(%6, %5)
  %16: real = const zero
  return %15
}
";
        let m = parse_ir(text).unwrap();
        assert_eq!(print_ir(&m), text);
    }

    #[test]
    fn missing_header_is_an_error() {
        assert_eq!(parse_ir("fn f() {\n}\n").unwrap_err().line, 1);
    }
}
