//! Random structured programs for property tests.
#![allow(dead_code)]

use proptest::prelude::*;

#[derive(Clone, Debug)]
pub enum Src {
    Secret(u8),
    Public,
    Const(u64),
    Acc,
}

#[derive(Clone, Debug)]
pub enum Stmt {
    Op(u8, Src),
    Load(Src),
    Store(Src),
    If(Src, u64, Vec<Stmt>, Vec<Stmt>),
    /// Do-while loop; `None` trips are secret: `((s >> k) & 3) + 1`.
    Loop(Option<u64>, u8, Vec<Stmt>),
    Call,
}

fn src() -> impl Strategy<Value = Src> {
    prop_oneof![
        (0u8..12).prop_map(Src::Secret),
        Just(Src::Public),
        (0u64..100).prop_map(Src::Const),
        Just(Src::Acc),
    ]
}

fn leaf() -> impl Strategy<Value = Stmt> {
    prop_oneof![
        3 => ((0u8..7), src()).prop_map(|(o, s)| Stmt::Op(o, s)),
        2 => src().prop_map(Stmt::Load),
        2 => src().prop_map(Stmt::Store),
        1 => Just(Stmt::Call),
    ]
}

pub fn stmts() -> impl Strategy<Value = Vec<Stmt>> {
    let stmt = leaf().prop_recursive(3, 24, 4, |inner| {
        prop_oneof![
            (src(), 1u64..63, prop::collection::vec(inner.clone(), 0..3), prop::collection::vec(inner.clone(), 0..3))
                .prop_map(|(s, k, a, b)| Stmt::If(s, k, a, b)),
            (prop::option::of(1u64..4), 0u8..12, prop::collection::vec(inner, 1..3)).prop_map(|(t, k, b)| Stmt::Loop(t, k, b)),
        ]
    });
    prop::collection::vec(stmt, 1..6)
}

struct Out {
    lines: Vec<String>,
    reg: usize,
    label: usize,
    cur: String,
}

impl Out {
    fn r(&mut self, hint: &str) -> String {
        self.reg += 1;
        format!("%{hint}{}", self.reg)
    }

    fn l(&mut self, hint: &str) -> String {
        self.label += 1;
        format!("{hint}{}", self.label)
    }

    fn emit(&mut self, s: String) {
        self.lines.push(format!("  {s}"));
    }

    fn start(&mut self, label: &str) {
        self.lines.push(format!("{label}:"));
        self.cur = label.to_string();
    }

    fn operand(&mut self, s: &Src, acc: &str) -> String {
        match s {
            Src::Secret(k) => {
                let r = self.r("sv");
                self.emit(format!("{r} = lshr i64 %s, {k}"));
                r
            }
            Src::Public => "%x".into(),
            Src::Const(c) => c.to_string(),
            Src::Acc => acc.to_string(),
        }
    }

    fn index(&mut self, s: &Src, acc: &str) -> String {
        let v = self.operand(s, acc);
        let i = self.r("i");
        self.emit(format!("{i} = and i64 {v}, 63"));
        i
    }

    fn block(&mut self, body: &[Stmt], mut acc: String) -> String {
        for s in body {
            acc = self.stmt(s, acc);
        }
        acc
    }

    fn stmt(&mut self, s: &Stmt, acc: String) -> String {
        match s {
            Stmt::Op(o, src) => {
                let v = self.operand(src, &acc);
                let r = self.r("a");
                match o {
                    5 | 6 => {
                        let d = self.r("d");
                        self.emit(format!("{d} = or i64 {v}, 1"));
                        let op = if *o == 5 { "div" } else { "rem" };
                        self.emit(format!("{r} = {op} i64 {acc}, {d}"));
                    }
                    _ => {
                        let op = ["add", "xor", "mul", "sub", "or"][*o as usize];
                        self.emit(format!("{r} = {op} i64 {acc}, {v}"));
                    }
                }
                r
            }
            Stmt::Load(src) => {
                let i = self.index(src, &acc);
                let p = self.r("p");
                let v = self.r("v");
                let r = self.r("a");
                self.emit(format!("{p} = gep [64 x i64] @t, 0, {i}"));
                self.emit(format!("{v} = load i64, {p}"));
                self.emit(format!("{r} = xor i64 {acc}, {v}"));
                r
            }
            Stmt::Store(src) => {
                let i = self.index(src, &acc);
                let p = self.r("p");
                self.emit(format!("{p} = gep [64 x i64] @t, 0, {i}"));
                self.emit(format!("store i64 {acc}, {p}"));
                acc
            }
            Stmt::Call => {
                let r = self.r("a");
                self.emit(format!("{r} = call @h({acc})"));
                r
            }
            Stmt::If(src, k, a, b) => {
                let i = self.index(src, &acc);
                let c = self.r("c");
                self.emit(format!("{c} = icmp lt {i}, {k}"));
                let (lt, le, lj) = (self.l("then"), self.l("else"), self.l("join"));
                self.emit(format!("condbr {c}, {lt}, {le}"));
                self.start(&lt);
                let at = self.block(a, acc.clone());
                let bt = self.cur.clone();
                self.emit(format!("br {lj}"));
                self.start(&le);
                let ae = self.block(b, acc);
                let be = self.cur.clone();
                self.emit(format!("br {lj}"));
                self.start(&lj);
                let r = self.r("a");
                self.emit(format!("{r} = phi i64 [{bt}: {at}, {be}: {ae}]"));
                r
            }
            Stmt::Loop(trip, k, body) => {
                let n = match trip {
                    Some(t) => t.to_string(),
                    None => {
                        let v = self.operand(&Src::Secret(*k), &acc);
                        let m = self.r("m");
                        let n = self.r("n");
                        self.emit(format!("{m} = and i64 {v}, 3"));
                        self.emit(format!("{n} = add i64 {m}, 1"));
                        n
                    }
                };
                let pre = self.cur.clone();
                let (lh, lx) = (self.l("loop"), self.l("after"));
                self.emit(format!("br {lh}"));
                self.start(&lh);
                let (iv, a) = (self.r("iv"), self.r("a"));
                let slot = self.lines.len();
                self.lines.push(String::new());
                self.lines.push(String::new());
                let end = self.block(body, a.clone());
                let latch = self.cur.clone();
                let (i1, c) = (self.r("iv"), self.r("c"));
                self.emit(format!("{i1} = add i64 {iv}, 1"));
                self.emit(format!("{c} = icmp lt {i1}, {n}"));
                self.emit(format!("condbr {c}, {lh}, {lx}"));
                self.lines[slot] = format!("  {iv} = phi i64 [{pre}: 0, {latch}: {i1}]");
                self.lines[slot + 1] = format!("  {a} = phi i64 [{pre}: {acc}, {latch}: {end}]");
                self.start(&lx);
                end
            }
        }
    }
}

const HELPER: &str = "func @h(%y: i64) -> i64 {
entry:
  %i = and i64 %y, 63
  %c = icmp lt %i, 32
  condbr %c, lo, hi
lo:
  %p = gep [64 x i64] @u, 0, %i
  %v = load i64, %p
  br join
hi:
  br join
join:
  %w = phi i64 [lo: %v, hi: 7]
  %r = add i64 %w, %y
  ret %r
}
";

/// `main(%x)` with one secret `%s`, threading a single accumulator.
pub fn render(body: &[Stmt]) -> String {
    let mut o = Out { lines: Vec::new(), reg: 0, label: 0, cur: String::new() };
    o.start("entry");
    o.emit("%s0 = secret i64 0".into());
    o.emit("%s = and i64 %s0, 65535".into());
    o.emit("%a0 = add i64 %x, 0".into());
    let acc = o.block(body, "%a0".into());
    o.emit(format!("ret {acc}"));
    let init: String = (0..64u64).map(|v| (v * 37 + 1).to_le_bytes().iter().map(|b| format!("{b:02x}")).collect::<String>()).collect();
    format!(
        "global @t : [64 x i64] = {init}\nglobal @u : [64 x i64] = {init}\n{HELPER}func @main(%x: i64) -> i64 {{\n{}\n}}\n",
        o.lines.join("\n")
    )
}

/// Random (not necessarily structured) control flow over up to 12 blocks.
pub fn raw_cfg() -> impl Strategy<Value = String> {
    (2usize..12).prop_flat_map(|n| prop::collection::vec((0u8..3, 0..n, 0..n), n)).prop_map(|blocks| {
        let mut s = String::from("func @main(%a: i64) -> i64 {\n");
        for (i, (kind, x, y)) in blocks.iter().enumerate() {
            s += &format!("b{i}:\n");
            match kind {
                0 => s += "  ret 0\n",
                1 => s += &format!("  br b{x}\n"),
                _ => s += &format!("  %c{i} = icmp lt %a, {i}\n  condbr %c{i}, b{x}, b{y}\n"),
            }
        }
        s + "}\n"
    })
}
