//! Text → [`Module`].
//!
//! ```text
//! entry @main
//! global @tab : [16 x i8] = 000102030405060708090a0b0c0d0e0f
//! func @main(%a: i64, %k: secret i64) -> i64 {
//! entry:
//!   %s = secret i64 0
//!   %c = icmp lt %s, 4096
//!   condbr %c, then, exit
//!   ...
//! }
//! dfl 0 = lambda 64 [global @tab 0 16 1 simple]
//! ```

use std::collections::{BTreeMap, HashSet};

use thiserror::Error;

use super::*;
use crate::dfl::{DflAccessMetadata, DflEntry, HandlerKind, SiteId};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ParseError {
    #[error("{line}:{col}: syntax error: {msg}")]
    Syntax { line: usize, col: usize, msg: String },
    #[error("duplicate {kind} `{name}`")]
    Duplicate { kind: &'static str, name: String },
    #[error("no entry function")]
    NoEntry,
    #[error("type mismatch: {0}")]
    TypeMismatch(String),
}

#[derive(Clone, Debug, PartialEq)]
enum Tok {
    Word(String),
    Reg(String),
    Glob(String),
    Int(u64),
    Punct(char),
    Arrow,
}

#[derive(Clone, Debug)]
struct Token {
    tok: Tok,
    raw: String,
    line: usize,
    col: usize,
}

fn is_ident_char(c: char) -> bool {
    c.is_ascii_alphanumeric() || matches!(c, '_' | '.' | '#' | '$')
}

fn lex(text: &str) -> Result<Vec<Token>, ParseError> {
    let mut out = Vec::new();
    for (ln, line) in text.lines().enumerate() {
        let line = line.split(';').next().unwrap_or("");
        let chars: Vec<char> = line.chars().collect();
        let mut i = 0;
        while i < chars.len() {
            let c = chars[i];
            let col = i + 1;
            if c.is_whitespace() {
                i += 1;
                continue;
            }
            let start = i;
            let tok = if c == '%' || c == '@' {
                i += 1;
                while i < chars.len() && is_ident_char(chars[i]) {
                    i += 1;
                }
                let name: String = chars[start + 1..i].iter().collect();
                if name.is_empty() {
                    return Err(syntax(ln + 1, col, "empty name"));
                }
                if c == '%' {
                    Tok::Reg(name)
                } else {
                    Tok::Glob(name)
                }
            } else if c == '-' && chars.get(i + 1) == Some(&'>') {
                i += 2;
                Tok::Arrow
            } else if c.is_ascii_digit() || (c == '-' && chars.get(i + 1).is_some_and(|d| d.is_ascii_digit())) {
                i += 1;
                while i < chars.len() && is_ident_char(chars[i]) {
                    i += 1;
                }
                let raw: String = chars[start..i].iter().collect();
                match parse_int(&raw) {
                    Some(v) => Tok::Int(v),
                    // Hex byte strings such as `00ff` lex as words.
                    None => Tok::Word(raw),
                }
            } else if is_ident_char(c) {
                while i < chars.len() && is_ident_char(chars[i]) {
                    i += 1;
                }
                Tok::Word(chars[start..i].iter().collect())
            } else if "{}()[],:=".contains(c) {
                i += 1;
                Tok::Punct(c)
            } else {
                return Err(syntax(ln + 1, col, &format!("unexpected character `{c}`")));
            };
            out.push(Token { tok, raw: chars[start..i].iter().collect(), line: ln + 1, col });
        }
    }
    Ok(out)
}

fn parse_int(raw: &str) -> Option<u64> {
    let (neg, body) = match raw.strip_prefix('-') {
        Some(b) => (true, b),
        None => (false, raw),
    };
    let v = if let Some(h) = body.strip_prefix("0x") {
        u64::from_str_radix(h, 16).ok()?
    } else {
        body.parse::<u64>().ok()?
    };
    Some(if neg { v.wrapping_neg() } else { v })
}

fn syntax(line: usize, col: usize, msg: &str) -> ParseError {
    ParseError::Syntax { line, col, msg: msg.to_string() }
}

struct Parser {
    toks: Vec<Token>,
    pos: usize,
    next_id: u32,
}

type PResult<T> = Result<T, ParseError>;

impl Parser {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos).map(|t| &t.tok)
    }

    fn peek_at(&self, k: usize) -> Option<&Tok> {
        self.toks.get(self.pos + k).map(|t| &t.tok)
    }

    fn err<T>(&self, msg: &str) -> PResult<T> {
        let (line, col) = match self.toks.get(self.pos) {
            Some(t) => (t.line, t.col),
            None => self.toks.last().map(|t| (t.line, t.col + t.raw.len())).unwrap_or((1, 1)),
        };
        Err(syntax(line, col, msg))
    }

    fn next(&mut self) -> PResult<Tok> {
        match self.toks.get(self.pos) {
            Some(t) => {
                self.pos += 1;
                Ok(t.tok.clone())
            }
            None => self.err("unexpected end of input"),
        }
    }

    fn expect_punct(&mut self, c: char) -> PResult<()> {
        match self.peek() {
            Some(Tok::Punct(p)) if *p == c => {
                self.pos += 1;
                Ok(())
            }
            _ => self.err(&format!("expected `{c}`")),
        }
    }

    fn eat_punct(&mut self, c: char) -> bool {
        if matches!(self.peek(), Some(Tok::Punct(p)) if *p == c) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn is_word(&self, w: &str) -> bool {
        matches!(self.peek(), Some(Tok::Word(x)) if x == w)
    }

    fn expect_word(&mut self, w: &str) -> PResult<()> {
        if self.is_word(w) {
            self.pos += 1;
            Ok(())
        } else {
            self.err(&format!("expected `{w}`"))
        }
    }

    fn word(&mut self) -> PResult<String> {
        match self.next()? {
            Tok::Word(w) => Ok(w),
            _ => {
                self.pos -= 1;
                self.err("expected identifier")
            }
        }
    }

    fn reg(&mut self) -> PResult<String> {
        match self.next()? {
            Tok::Reg(r) => Ok(r),
            _ => {
                self.pos -= 1;
                self.err("expected register")
            }
        }
    }

    fn glob(&mut self) -> PResult<String> {
        match self.next()? {
            Tok::Glob(g) => Ok(g),
            _ => {
                self.pos -= 1;
                self.err("expected @name")
            }
        }
    }

    fn int(&mut self) -> PResult<u64> {
        match self.next()? {
            Tok::Int(v) => Ok(v),
            _ => {
                self.pos -= 1;
                self.err("expected integer")
            }
        }
    }

    fn id(&mut self) -> InstId {
        let id = InstId(self.next_id);
        self.next_id += 1;
        id
    }

    fn ty(&mut self) -> PResult<Type> {
        match self.next()? {
            Tok::Word(w) => match w.as_str() {
                "i1" => Ok(Type::I1),
                "i8" => Ok(Type::I8),
                "i32" => Ok(Type::I32),
                "i64" => Ok(Type::I64),
                "addr" => Ok(Type::Addr),
                _ => {
                    self.pos -= 1;
                    self.err(&format!("unknown type `{w}`"))
                }
            },
            Tok::Punct('[') => {
                let n = self.int()?;
                self.expect_word("x")?;
                let elem = self.ty()?;
                self.expect_punct(']')?;
                Ok(Type::Array(Box::new(elem), n))
            }
            Tok::Punct('{') => {
                let mut fields = Vec::new();
                if !self.eat_punct('}') {
                    loop {
                        let name = self.word()?;
                        self.expect_punct(':')?;
                        let ty = self.ty()?;
                        fields.push(Field { name, ty });
                        if self.eat_punct('}') {
                            break;
                        }
                        self.expect_punct(',')?;
                    }
                }
                Ok(Type::Struct(fields))
            }
            _ => {
                self.pos -= 1;
                self.err("expected type")
            }
        }
    }

    fn operand(&mut self) -> PResult<Operand> {
        match self.next()? {
            Tok::Reg(r) => Ok(Operand::Reg(r)),
            Tok::Glob(g) => Ok(Operand::Global(g)),
            Tok::Int(v) => Ok(Operand::Const(v)),
            Tok::Word(w) if w == "true" => Ok(Operand::Const(1)),
            Tok::Word(w) if w == "false" => Ok(Operand::Const(0)),
            _ => {
                self.pos -= 1;
                self.err("expected operand")
            }
        }
    }

    fn args(&mut self) -> PResult<Vec<Operand>> {
        self.expect_punct('(')?;
        let mut args = Vec::new();
        if self.eat_punct(')') {
            return Ok(args);
        }
        loop {
            args.push(self.operand()?);
            if self.eat_punct(')') {
                return Ok(args);
            }
            self.expect_punct(',')?;
        }
    }

    fn module(&mut self) -> PResult<Module> {
        let mut m = Module::default();
        let mut entry: Option<String> = None;
        let mut gnames = HashSet::new();
        let mut fnames = HashSet::new();
        let mut dfl = BTreeMap::new();
        while let Some(t) = self.peek().cloned() {
            match t {
                Tok::Word(w) if w == "entry" => {
                    self.pos += 1;
                    entry = Some(self.glob()?);
                }
                Tok::Word(w) if w == "global" => {
                    self.pos += 1;
                    let g = self.global()?;
                    if !gnames.insert(g.name.clone()) {
                        return Err(ParseError::Duplicate { kind: "global", name: g.name });
                    }
                    m.globals.push(g);
                }
                Tok::Word(w) if w == "func" => {
                    self.pos += 1;
                    let f = self.function()?;
                    if !fnames.insert(f.name.clone()) {
                        return Err(ParseError::Duplicate { kind: "function", name: f.name });
                    }
                    m.functions.push(f);
                }
                Tok::Word(w) if w == "dfl" => {
                    self.pos += 1;
                    let n = self.int()? as u32;
                    self.expect_punct('=')?;
                    let meta = self.dfl_meta()?;
                    if dfl.insert(n, meta).is_some() {
                        return Err(ParseError::Duplicate { kind: "dfl record", name: n.to_string() });
                    }
                }
                _ => return self.err("expected `entry`, `global`, `func` or `dfl`"),
            }
        }
        m.dfl = dfl;
        m.entry = match entry {
            Some(e) => e,
            None if fnames.contains("main") => "main".into(),
            None if m.functions.len() == 1 => m.functions[0].name.clone(),
            None => return Err(ParseError::NoEntry),
        };
        if !fnames.contains(&m.entry) {
            return Err(ParseError::NoEntry);
        }
        Ok(m)
    }

    fn global(&mut self) -> PResult<GlobalDef> {
        let name = self.glob()?;
        self.expect_punct(':')?;
        let ty = self.ty()?;
        let init = if self.eat_punct('=') {
            let t = self.toks.get(self.pos).cloned();
            let Some(t) = t else { return self.err("expected hex bytes") };
            self.pos += 1;
            let raw = t.raw.trim_start_matches("0x");
            if raw.len() % 2 != 0 || !raw.chars().all(|c| c.is_ascii_hexdigit()) {
                self.pos -= 1;
                return self.err("malformed hex initializer");
            }
            let bytes: Vec<u8> = (0..raw.len())
                .step_by(2)
                .map(|i| u8::from_str_radix(&raw[i..i + 2], 16).unwrap())
                .collect();
            if bytes.len() as u64 > ty.size() {
                return Err(ParseError::TypeMismatch(format!(
                    "initializer of @{name} has {} bytes, type holds {}",
                    bytes.len(),
                    ty.size()
                )));
            }
            Some(bytes)
        } else {
            None
        };
        Ok(GlobalDef { name, ty, init })
    }

    fn function(&mut self) -> PResult<Function> {
        let name = self.glob()?;
        self.expect_punct('(')?;
        let mut params = Vec::new();
        if !self.eat_punct(')') {
            loop {
                let pname = self.reg()?;
                self.expect_punct(':')?;
                let secret = if self.is_word("secret") {
                    self.pos += 1;
                    true
                } else {
                    false
                };
                let ty = self.ty()?;
                params.push(Param { name: pname, ty, secret });
                if self.eat_punct(')') {
                    break;
                }
                self.expect_punct(',')?;
            }
        }
        match self.next()? {
            Tok::Arrow => {}
            _ => {
                self.pos -= 1;
                return self.err("expected `->`");
            }
        }
        let ret = self.ty()?;
        self.expect_punct('{')?;
        let mut blocks: Vec<Block> = Vec::new();
        let mut labels = HashSet::new();
        while !self.eat_punct('}') {
            let label = self.word()?;
            self.expect_punct(':')?;
            if !labels.insert(label.clone()) {
                return Err(ParseError::Duplicate { kind: "label", name: label });
            }
            let mut insts = Vec::new();
            let term = loop {
                if let Some(term) = self.terminator()? {
                    break term;
                }
                insts.push(self.inst()?);
            };
            blocks.push(Block { label, insts, term });
        }
        if blocks.is_empty() {
            return self.err("function without blocks");
        }
        let mut defs = HashSet::new();
        for p in &params {
            if !defs.insert(p.name.clone()) {
                return Err(ParseError::Duplicate { kind: "register", name: p.name.clone() });
            }
        }
        for i in blocks.iter().flat_map(|b| b.insts.iter()) {
            if let Some(r) = &i.result {
                if !defs.insert(r.clone()) {
                    return Err(ParseError::Duplicate { kind: "register", name: r.clone() });
                }
            }
        }
        Ok(Function { name, params, ret, blocks })
    }

    fn terminator(&mut self) -> PResult<Option<Terminator>> {
        let kind = if self.is_word("br") {
            self.pos += 1;
            TermKind::Br(self.word()?)
        } else if self.is_word("condbr") {
            self.pos += 1;
            let cond = self.operand()?;
            self.expect_punct(',')?;
            let then_label = self.word()?;
            self.expect_punct(',')?;
            let else_label = self.word()?;
            TermKind::CondBr { cond, then_label, else_label }
        } else if self.is_word("ret") {
            self.pos += 1;
            TermKind::Ret(self.operand()?)
        } else {
            return Ok(None);
        };
        Ok(Some(Terminator { id: self.id(), kind }))
    }

    fn inst(&mut self) -> PResult<Inst> {
        let result = if matches!(self.peek(), Some(Tok::Reg(_))) && self.peek_at(1) == Some(&Tok::Punct('=')) {
            let r = self.reg()?;
            self.pos += 1;
            Some(r)
        } else {
            None
        };
        let op = self.word()?;
        let kind = match op.as_str() {
            "icmp" => {
                let w = self.word()?;
                let Some(pred) = Pred::from_mnemonic(&w) else {
                    self.pos -= 1;
                    return self.err("unknown icmp predicate");
                };
                let lhs = self.operand()?;
                self.expect_punct(',')?;
                InstKind::Icmp { pred, lhs, rhs: self.operand()? }
            }
            "select" => {
                let cond = self.operand()?;
                self.expect_punct(',')?;
                let a = self.operand()?;
                self.expect_punct(',')?;
                InstKind::Select { cond, a, b: self.operand()? }
            }
            "phi" => {
                let ty = self.ty()?;
                self.expect_punct('[')?;
                let mut incoming = Vec::new();
                loop {
                    let l = self.word()?;
                    self.expect_punct(':')?;
                    incoming.push((l, self.operand()?));
                    if self.eat_punct(']') {
                        break;
                    }
                    self.expect_punct(',')?;
                }
                InstKind::Phi { ty, incoming }
            }
            "load" => {
                let ty = self.ty()?;
                self.expect_punct(',')?;
                InstKind::Load { ty, ptr: self.operand()? }
            }
            "store" => {
                let ty = self.ty()?;
                let val = self.operand()?;
                self.expect_punct(',')?;
                InstKind::Store { ty, val, ptr: self.operand()? }
            }
            "gep" => {
                let ty = self.ty()?;
                let base = self.operand()?;
                let mut indices = Vec::new();
                while self.eat_punct(',') {
                    indices.push(self.operand()?);
                }
                InstKind::Gep { ty, base, indices }
            }
            "alloca" | "heapalloc" => {
                let dfl = self.is_word("dfl");
                if dfl {
                    self.pos += 1;
                }
                let ty = self.ty()?;
                if op == "alloca" {
                    InstKind::Alloca { ty, dfl }
                } else {
                    InstKind::HeapAlloc { ty, dfl }
                }
            }
            "heapfree" => {
                let dfl = self.is_word("dfl");
                if dfl {
                    self.pos += 1;
                }
                InstKind::HeapFree { ptr: self.operand()?, dfl }
            }
            "call" => {
                let callee = self.glob()?;
                InstKind::Call { callee, args: self.args()? }
            }
            "icall" => {
                let ret = self.ty()?;
                let callee = self.operand()?;
                InstKind::ICall { ret, callee, args: self.args()? }
            }
            "secret" => {
                let ty = self.ty()?;
                InstKind::Secret { ty, index: self.int()? as u32 }
            }
            "trap" => InstKind::Trap { cond: self.operand()? },
            other => match BinOp::from_mnemonic(other) {
                Some(op) => {
                    let ty = self.ty()?;
                    let lhs = self.operand()?;
                    self.expect_punct(',')?;
                    InstKind::Bin { op, ty, lhs, rhs: self.operand()? }
                }
                None => {
                    self.pos -= 1;
                    return self.err(&format!("unknown instruction `{other}`"));
                }
            },
        };
        let produces = !matches!(
            kind,
            InstKind::Store { .. } | InstKind::HeapFree { .. } | InstKind::Trap { .. }
        );
        let is_call = matches!(kind, InstKind::Call { .. } | InstKind::ICall { .. });
        if result.is_none() && produces && !is_call {
            return self.err(&format!("`{op}` needs a result register"));
        }
        if result.is_some() && !produces {
            return self.err(&format!("`{op}` produces no value"));
        }
        Ok(Inst { id: self.id(), result, kind })
    }

    fn site(&mut self) -> PResult<SiteId> {
        let class = self.word()?;
        if class == "global" {
            return Ok(SiteId::Global(self.glob()?));
        }
        let func = self.word()?;
        self.expect_punct(':')?;
        self.expect_punct(':')?;
        let reg = self.word()?;
        match class.as_str() {
            "stack" => Ok(SiteId::Stack { func, reg }),
            "heap" => Ok(SiteId::Heap { func, reg }),
            _ => self.err("expected storage class"),
        }
    }

    fn dfl_meta(&mut self) -> PResult<DflAccessMetadata> {
        self.expect_word("lambda")?;
        let lambda = self.int()?;
        let natural = self.is_word("natural");
        if natural {
            self.pos += 1;
        }
        self.expect_punct('[')?;
        let mut entries = Vec::new();
        if !self.eat_punct(']') {
            loop {
                let site = self.site()?;
                let offset = self.int()?;
                let len = self.int()?;
                let stride = self.int()?;
                let h = self.word()?;
                let Some(handler) = HandlerKind::from_name(&h) else {
                    self.pos -= 1;
                    return self.err("unknown handler");
                };
                entries.push(DflEntry { site, offset, len, stride, handler });
                if self.eat_punct(']') {
                    break;
                }
                self.expect_punct(',')?;
            }
        }
        Ok(DflAccessMetadata { lambda, natural, entries })
    }
}

/// Parses IR text. Instruction ids are assigned in lexical order.
pub fn parse_module(text: &str) -> Result<Module, ParseError> {
    let toks = lex(text)?;
    let mut p = Parser { toks, pos: 0, next_id: 0 };
    p.module()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_text_has_no_entry() {
        assert_eq!(parse_module(""), Err(ParseError::NoEntry));
    }

    #[test]
    fn syntax_error_reports_position() {
        let err = parse_module("func @f() -> i64 {\nentry:\n  %x = frob i64 1, 2\n  ret %x\n}").unwrap_err();
        match err {
            ParseError::Syntax { line, col, .. } => assert_eq!((line, col), (3, 8)),
            e => panic!("unexpected {e:?}"),
        }
    }

    #[test]
    fn duplicate_register_rejected() {
        let src = "func @f() -> i64 {\nentry:\n  %x = add i64 1, 2\n  %x = add i64 1, 2\n  ret %x\n}";
        assert!(matches!(parse_module(src), Err(ParseError::Duplicate { kind: "register", .. })));
    }

    #[test]
    fn ids_in_lexical_order() {
        let src = "func @f(%a: i64) -> i64 {\nentry:\n  %x = add i64 %a, 2\n  %y = mul i64 %x, -1\n  ret %y\n}";
        let m = parse_module(src).unwrap();
        let b = &m.functions[0].blocks[0];
        assert_eq!(b.insts[0].id, InstId(0));
        assert_eq!(b.insts[1].id, InstId(1));
        assert_eq!(b.term.id, InstId(2));
        assert_eq!(
            b.insts[1].kind,
            InstKind::Bin { op: BinOp::Mul, ty: Type::I64, lhs: Operand::reg("x"), rhs: Operand::Const(u64::MAX) }
        );
    }

    #[test]
    fn global_initializer_and_struct_type() {
        let m = parse_module(
            "global @g : {a: i32, b: [2 x i8]} = 0102\nfunc @main() -> i64 {\nentry:\n  ret 0\n}",
        )
        .unwrap();
        assert_eq!(m.globals[0].ty.size(), 6);
        assert_eq!(m.globals[0].ty.field_offset(1), Some(4));
        assert_eq!(m.globals[0].init.as_deref(), Some(&[1u8, 2][..]));
    }
}
