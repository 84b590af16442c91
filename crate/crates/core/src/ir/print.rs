//! Canonical [`Module`] → text.

use std::fmt::Write;

use super::*;

pub fn type_str(t: &Type) -> String {
    match t {
        Type::I1 => "i1".into(),
        Type::I8 => "i8".into(),
        Type::I32 => "i32".into(),
        Type::I64 => "i64".into(),
        Type::Addr => "addr".into(),
        Type::Array(e, n) => format!("[{n} x {}]", type_str(e)),
        Type::Struct(fields) => {
            let inner: Vec<String> =
                fields.iter().map(|f| format!("{}: {}", f.name, type_str(&f.ty))).collect();
            format!("{{{}}}", inner.join(", "))
        }
    }
}

pub fn operand_str(o: &Operand) -> String {
    match o {
        Operand::Reg(r) => format!("%{r}"),
        Operand::Global(g) => format!("@{g}"),
        Operand::Const(c) => {
            // Small negative constants read better signed.
            let s = *c as i64;
            if (-4096..0).contains(&s) {
                s.to_string()
            } else {
                c.to_string()
            }
        }
    }
}

fn args_str(args: &[Operand]) -> String {
    args.iter().map(operand_str).collect::<Vec<_>>().join(", ")
}

pub fn inst_str(i: &Inst) -> String {
    let body = match &i.kind {
        InstKind::Bin { op, ty, lhs, rhs } => {
            format!("{} {} {}, {}", op.mnemonic(), type_str(ty), operand_str(lhs), operand_str(rhs))
        }
        InstKind::Icmp { pred, lhs, rhs } => {
            format!("icmp {} {}, {}", pred.mnemonic(), operand_str(lhs), operand_str(rhs))
        }
        InstKind::Select { cond, a, b } => {
            format!("select {}, {}, {}", operand_str(cond), operand_str(a), operand_str(b))
        }
        InstKind::Phi { ty, incoming } => {
            let inc: Vec<String> =
                incoming.iter().map(|(l, v)| format!("{l}: {}", operand_str(v))).collect();
            format!("phi {} [{}]", type_str(ty), inc.join(", "))
        }
        InstKind::Load { ty, ptr } => format!("load {}, {}", type_str(ty), operand_str(ptr)),
        InstKind::Store { ty, val, ptr } => {
            format!("store {} {}, {}", type_str(ty), operand_str(val), operand_str(ptr))
        }
        InstKind::Gep { ty, base, indices } => {
            let mut s = format!("gep {} {}", type_str(ty), operand_str(base));
            for idx in indices {
                s.push_str(", ");
                s.push_str(&operand_str(idx));
            }
            s
        }
        InstKind::Alloca { ty, dfl } => {
            format!("alloca {}{}", if *dfl { "dfl " } else { "" }, type_str(ty))
        }
        InstKind::HeapAlloc { ty, dfl } => {
            format!("heapalloc {}{}", if *dfl { "dfl " } else { "" }, type_str(ty))
        }
        InstKind::HeapFree { ptr, dfl } => {
            format!("heapfree {}{}", if *dfl { "dfl " } else { "" }, operand_str(ptr))
        }
        InstKind::Call { callee, args } => format!("call @{callee}({})", args_str(args)),
        InstKind::ICall { ret, callee, args } => {
            format!("icall {} {}({})", type_str(ret), operand_str(callee), args_str(args))
        }
        InstKind::Secret { ty, index } => format!("secret {} {index}", type_str(ty)),
        InstKind::Trap { cond } => format!("trap {}", operand_str(cond)),
    };
    match &i.result {
        Some(r) => format!("%{r} = {body}"),
        None => body,
    }
}

pub fn term_str(t: &Terminator) -> String {
    match &t.kind {
        TermKind::Br(l) => format!("br {l}"),
        TermKind::CondBr { cond, then_label, else_label } => {
            format!("condbr {}, {then_label}, {else_label}", operand_str(cond))
        }
        TermKind::Ret(v) => format!("ret {}", operand_str(v)),
    }
}

pub fn function_str(f: &Function) -> String {
    let mut out = String::new();
    let params: Vec<String> = f
        .params
        .iter()
        .map(|p| format!("%{}: {}{}", p.name, if p.secret { "secret " } else { "" }, type_str(&p.ty)))
        .collect();
    let _ = writeln!(out, "func @{}({}) -> {} {{", f.name, params.join(", "), type_str(&f.ret));
    for b in &f.blocks {
        let _ = writeln!(out, "{}:", b.label);
        for i in &b.insts {
            let _ = writeln!(out, "  {}", inst_str(i));
        }
        let _ = writeln!(out, "  {}", term_str(&b.term));
    }
    out.push_str("}\n");
    out
}

/// Deterministic text form. Instruction ids are implicit (lexical order).
pub fn print_module(m: &Module) -> String {
    let mut out = String::new();
    for g in &m.globals {
        let _ = write!(out, "global @{} : {}", g.name, type_str(&g.ty));
        if let Some(init) = &g.init {
            out.push_str(" = ");
            for b in init {
                let _ = write!(out, "{b:02x}");
            }
        }
        out.push('\n');
    }
    let _ = writeln!(out, "entry @{}", m.entry);
    for f in &m.functions {
        out.push('\n');
        out.push_str(&function_str(f));
    }
    if !m.dfl.is_empty() {
        out.push('\n');
    }
    for (n, meta) in &m.dfl {
        let entries: Vec<String> = meta
            .entries
            .iter()
            .map(|e| format!("{} {} {} {} {}", e.site, e.offset, e.len, e.stride, e.handler.name()))
            .collect();
        let _ = writeln!(
            out,
            "dfl {n} = lambda {}{} [{}]",
            meta.lambda,
            if meta.natural { " natural" } else { "" },
            entries.join(", ")
        );
    }
    out
}
