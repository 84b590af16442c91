//! SSA intermediate representation: types, instructions, modules.
//!
//! Registers are named (`%x`), blocks are labelled, and every instruction
//! and terminator carries a module-wide [`InstId`]. Parsing assigns ids in
//! lexical order; passes allocate fresh ids with an [`IdGen`] and
//! [`Module::renumber`] restores lexical order before printing.

pub mod cfg;
pub mod edit;
pub mod parse;
pub mod print;
pub mod validate;

use std::collections::{BTreeMap, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::dfl::DflAccessMetadata;

pub use cfg::Cfg;
pub use parse::{parse_module, ParseError};
pub use print::print_module;
pub use validate::{validate, Diagnostic};

/// Module-wide instruction identifier.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct InstId(pub u32);

impl fmt::Display for InstId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{}", self.0)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Field {
    pub name: String,
    pub ty: Type,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum Type {
    I1,
    I8,
    I32,
    I64,
    /// 64-bit address into simulated memory.
    Addr,
    Array(Box<Type>, u64),
    /// Packed aggregate: field offsets are the sums of preceding sizes.
    Struct(Vec<Field>),
}

impl Type {
    /// Size in bytes. `i1` occupies one byte in memory.
    pub fn size(&self) -> u64 {
        match self {
            Type::I1 | Type::I8 => 1,
            Type::I32 => 4,
            Type::I64 | Type::Addr => 8,
            Type::Array(elem, n) => elem.size() * n,
            Type::Struct(fields) => fields.iter().map(|f| f.ty.size()).sum(),
        }
    }

    pub fn bits(&self) -> u32 {
        match self {
            Type::I1 => 1,
            Type::I8 => 8,
            Type::I32 => 32,
            _ => 64,
        }
    }

    pub fn is_scalar(&self) -> bool {
        !matches!(self, Type::Array(..) | Type::Struct(..))
    }

    /// Truncates a raw 64-bit value to this type's width.
    pub fn mask(&self, v: u64) -> u64 {
        match self.bits() {
            64 => v,
            b => v & ((1u64 << b) - 1),
        }
    }

    /// Byte offset of field `idx` in a struct type.
    pub fn field_offset(&self, idx: usize) -> Option<u64> {
        match self {
            Type::Struct(fields) if idx < fields.len() => {
                Some(fields[..idx].iter().map(|f| f.ty.size()).sum())
            }
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum Operand {
    Reg(String),
    Const(u64),
    /// Address of a global or function.
    Global(String),
}

impl Operand {
    pub fn reg(name: impl Into<String>) -> Self {
        Operand::Reg(name.into())
    }

    pub fn as_reg(&self) -> Option<&str> {
        match self {
            Operand::Reg(r) => Some(r),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    And,
    Or,
    Xor,
    Shl,
    Lshr,
    Div,
    Rem,
}

impl BinOp {
    pub fn mnemonic(self) -> &'static str {
        match self {
            BinOp::Add => "add",
            BinOp::Sub => "sub",
            BinOp::Mul => "mul",
            BinOp::And => "and",
            BinOp::Or => "or",
            BinOp::Xor => "xor",
            BinOp::Shl => "shl",
            BinOp::Lshr => "lshr",
            BinOp::Div => "div",
            BinOp::Rem => "rem",
        }
    }

    pub fn from_mnemonic(s: &str) -> Option<Self> {
        Some(match s {
            "add" => BinOp::Add,
            "sub" => BinOp::Sub,
            "mul" => BinOp::Mul,
            "and" => BinOp::And,
            "or" => BinOp::Or,
            "xor" => BinOp::Xor,
            "shl" => BinOp::Shl,
            "lshr" => BinOp::Lshr,
            "div" => BinOp::Div,
            "rem" => BinOp::Rem,
            _ => return None,
        })
    }

    pub fn is_div_rem(self) -> bool {
        matches!(self, BinOp::Div | BinOp::Rem)
    }
}

/// Unsigned comparison predicates.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Pred {
    Lt,
    Le,
    Eq,
    Ne,
    Gt,
    Ge,
}

impl Pred {
    pub fn mnemonic(self) -> &'static str {
        match self {
            Pred::Lt => "lt",
            Pred::Le => "le",
            Pred::Eq => "eq",
            Pred::Ne => "ne",
            Pred::Gt => "gt",
            Pred::Ge => "ge",
        }
    }

    pub fn from_mnemonic(s: &str) -> Option<Self> {
        Some(match s {
            "lt" => Pred::Lt,
            "le" => Pred::Le,
            "eq" => Pred::Eq,
            "ne" => Pred::Ne,
            "gt" => Pred::Gt,
            "ge" => Pred::Ge,
            _ => return None,
        })
    }

    pub fn eval(self, a: u64, b: u64) -> bool {
        match self {
            Pred::Lt => a < b,
            Pred::Le => a <= b,
            Pred::Eq => a == b,
            Pred::Ne => a != b,
            Pred::Gt => a > b,
            Pred::Ge => a >= b,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum InstKind {
    Bin { op: BinOp, ty: Type, lhs: Operand, rhs: Operand },
    Icmp { pred: Pred, lhs: Operand, rhs: Operand },
    Select { cond: Operand, a: Operand, b: Operand },
    Phi { ty: Type, incoming: Vec<(String, Operand)> },
    Load { ty: Type, ptr: Operand },
    Store { ty: Type, val: Operand, ptr: Operand },
    Gep { ty: Type, base: Operand, indices: Vec<Operand> },
    /// `dfl` marks allocations interposed with in-band object headers.
    Alloca { ty: Type, dfl: bool },
    HeapAlloc { ty: Type, dfl: bool },
    HeapFree { ptr: Operand, dfl: bool },
    /// Direct call; callees named `ct.*` are runtime intrinsics.
    Call { callee: String, args: Vec<Operand> },
    ICall { ret: Type, callee: Operand, args: Vec<Operand> },
    Secret { ty: Type, index: u32 },
    /// Aborts execution when `cond` is nonzero (failsafe).
    Trap { cond: Operand },
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Inst {
    pub id: InstId,
    pub result: Option<String>,
    pub kind: InstKind,
}

impl Inst {
    /// Operands read by the instruction, excluding phi labels.
    pub fn operands(&self) -> Vec<&Operand> {
        match &self.kind {
            InstKind::Bin { lhs, rhs, .. } | InstKind::Icmp { lhs, rhs, .. } => vec![lhs, rhs],
            InstKind::Select { cond, a, b } => vec![cond, a, b],
            InstKind::Phi { incoming, .. } => incoming.iter().map(|(_, v)| v).collect(),
            InstKind::Load { ptr, .. } | InstKind::HeapFree { ptr, .. } => vec![ptr],
            InstKind::Store { val, ptr, .. } => vec![val, ptr],
            InstKind::Gep { base, indices, .. } => std::iter::once(base).chain(indices).collect(),
            InstKind::Alloca { .. } | InstKind::HeapAlloc { .. } | InstKind::Secret { .. } => vec![],
            InstKind::Call { args, .. } => args.iter().collect(),
            InstKind::ICall { callee, args, .. } => std::iter::once(callee).chain(args).collect(),
            InstKind::Trap { cond } => vec![cond],
        }
    }

    pub fn operands_mut(&mut self) -> Vec<&mut Operand> {
        match &mut self.kind {
            InstKind::Bin { lhs, rhs, .. } | InstKind::Icmp { lhs, rhs, .. } => vec![lhs, rhs],
            InstKind::Select { cond, a, b } => vec![cond, a, b],
            InstKind::Phi { incoming, .. } => incoming.iter_mut().map(|(_, v)| v).collect(),
            InstKind::Load { ptr, .. } | InstKind::HeapFree { ptr, .. } => vec![ptr],
            InstKind::Store { val, ptr, .. } => vec![val, ptr],
            InstKind::Gep { base, indices, .. } => {
                std::iter::once(base).chain(indices.iter_mut()).collect()
            }
            InstKind::Alloca { .. } | InstKind::HeapAlloc { .. } | InstKind::Secret { .. } => vec![],
            InstKind::Call { args, .. } => args.iter_mut().collect(),
            InstKind::ICall { callee, args, .. } => {
                std::iter::once(callee).chain(args.iter_mut()).collect()
            }
            InstKind::Trap { cond } => vec![cond],
        }
    }

    pub fn is_phi(&self) -> bool {
        matches!(self.kind, InstKind::Phi { .. })
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum TermKind {
    Br(String),
    CondBr { cond: Operand, then_label: String, else_label: String },
    Ret(Operand),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Terminator {
    pub id: InstId,
    pub kind: TermKind,
}

impl Terminator {
    pub fn successors(&self) -> Vec<&str> {
        match &self.kind {
            TermKind::Br(l) => vec![l],
            TermKind::CondBr { then_label, else_label, .. } => vec![then_label, else_label],
            TermKind::Ret(_) => vec![],
        }
    }

    pub fn successors_mut(&mut self) -> Vec<&mut String> {
        match &mut self.kind {
            TermKind::Br(l) => vec![l],
            TermKind::CondBr { then_label, else_label, .. } => vec![then_label, else_label],
            TermKind::Ret(_) => vec![],
        }
    }

    pub fn operand(&self) -> Option<&Operand> {
        match &self.kind {
            TermKind::CondBr { cond, .. } => Some(cond),
            TermKind::Ret(v) => Some(v),
            TermKind::Br(_) => None,
        }
    }

    pub fn operand_mut(&mut self) -> Option<&mut Operand> {
        match &mut self.kind {
            TermKind::CondBr { cond, .. } => Some(cond),
            TermKind::Ret(v) => Some(v),
            TermKind::Br(_) => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Block {
    pub label: String,
    pub insts: Vec<Inst>,
    pub term: Terminator,
}

impl Block {
    pub fn phis(&self) -> impl Iterator<Item = &Inst> {
        self.insts.iter().take_while(|i| i.is_phi())
    }

    pub fn first_non_phi(&self) -> usize {
        self.insts.iter().take_while(|i| i.is_phi()).count()
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Param {
    pub name: String,
    pub ty: Type,
    /// Tainted on entry when profiling.
    pub secret: bool,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Function {
    pub name: String,
    pub params: Vec<Param>,
    pub ret: Type,
    pub blocks: Vec<Block>,
}

impl Function {
    pub fn block(&self, label: &str) -> Option<&Block> {
        self.blocks.iter().find(|b| b.label == label)
    }

    pub fn block_mut(&mut self, label: &str) -> Option<&mut Block> {
        self.blocks.iter_mut().find(|b| b.label == label)
    }

    pub fn block_index(&self, label: &str) -> Option<usize> {
        self.blocks.iter().position(|b| b.label == label)
    }

    pub fn insts(&self) -> impl Iterator<Item = &Inst> {
        self.blocks.iter().flat_map(|b| b.insts.iter())
    }

    /// Result type of every register (params included).
    pub fn reg_types(&self, module: &Module) -> HashMap<String, Type> {
        let mut types: HashMap<String, Type> =
            self.params.iter().map(|p| (p.name.clone(), p.ty.clone())).collect();
        // Select needs its operands' types, so iterate until stable.
        loop {
            let before = types.len();
            for inst in self.insts() {
                let Some(r) = &inst.result else { continue };
                if types.contains_key(r) {
                    continue;
                }
                if let Some(t) = result_type(inst, module, &types) {
                    types.insert(r.clone(), t);
                }
            }
            if types.len() == before {
                break;
            }
        }
        types
    }

    /// A register name not yet used in this function, derived from `hint`.
    pub fn fresh_reg(&self, hint: &str, taken: &mut std::collections::HashSet<String>) -> String {
        if taken.is_empty() {
            for p in &self.params {
                taken.insert(p.name.clone());
            }
            for i in self.insts() {
                if let Some(r) = &i.result {
                    taken.insert(r.clone());
                }
            }
        }
        let mut n = 0usize;
        loop {
            let cand = if n == 0 { hint.to_string() } else { format!("{hint}.{n}") };
            if taken.insert(cand.clone()) {
                return cand;
            }
            n += 1;
        }
    }

    pub fn fresh_label(&self, hint: &str) -> String {
        let mut n = 0usize;
        loop {
            let cand = if n == 0 { hint.to_string() } else { format!("{hint}.{n}") };
            if self.block(&cand).is_none() {
                return cand;
            }
            n += 1;
        }
    }
}

fn operand_type(op: &Operand, types: &HashMap<String, Type>) -> Option<Type> {
    match op {
        Operand::Reg(r) => types.get(r).cloned(),
        Operand::Global(_) => Some(Type::Addr),
        Operand::Const(_) => None,
    }
}

/// Static result type of an instruction, if it produces a value.
pub fn result_type(inst: &Inst, module: &Module, types: &HashMap<String, Type>) -> Option<Type> {
    Some(match &inst.kind {
        InstKind::Bin { ty, .. } => ty.clone(),
        InstKind::Icmp { .. } => Type::I1,
        InstKind::Select { a, b, .. } => operand_type(a, types)
            .or_else(|| operand_type(b, types))
            .unwrap_or(Type::I64),
        InstKind::Phi { ty, .. } | InstKind::Load { ty, .. } | InstKind::Secret { ty, .. } => {
            ty.clone()
        }
        InstKind::Gep { .. } | InstKind::Alloca { .. } | InstKind::HeapAlloc { .. } => Type::Addr,
        InstKind::Call { callee, args } => {
            if let Some(intr) = crate::intrinsics::Intrinsic::parse(callee) {
                return intr.result_type(args, types);
            }
            module.function(callee)?.ret.clone()
        }
        InstKind::ICall { ret, .. } => ret.clone(),
        InstKind::Store { .. } | InstKind::HeapFree { .. } | InstKind::Trap { .. } => return None,
    })
}

/// Hands out instruction ids above every id of the module it was made for.
#[derive(Clone, Debug)]
pub struct IdGen {
    next: u32,
}

impl IdGen {
    pub fn for_module(m: &Module) -> Self {
        let any = m.functions.iter().any(|f| !f.blocks.is_empty());
        IdGen { next: if any { m.max_id() + 1 } else { 0 } }
    }

    pub fn next(&mut self) -> InstId {
        let id = InstId(self.next);
        self.next += 1;
        id
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GlobalDef {
    pub name: String,
    pub ty: Type,
    pub init: Option<Vec<u8>>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Module {
    pub globals: Vec<GlobalDef>,
    pub functions: Vec<Function>,
    pub entry: String,
    /// DFL access metadata referenced by `ct.load`/`ct.store` intrinsics.
    pub dfl: BTreeMap<u32, DflAccessMetadata>,
}

impl Module {
    pub fn function(&self, name: &str) -> Option<&Function> {
        self.functions.iter().find(|f| f.name == name)
    }

    pub fn function_mut(&mut self, name: &str) -> Option<&mut Function> {
        self.functions.iter_mut().find(|f| f.name == name)
    }

    pub fn global(&self, name: &str) -> Option<&GlobalDef> {
        self.globals.iter().find(|g| g.name == name)
    }

    pub fn entry_function(&self) -> Option<&Function> {
        self.function(&self.entry)
    }

    pub fn max_id(&self) -> u32 {
        self.functions
            .iter()
            .flat_map(|f| f.blocks.iter())
            .flat_map(|b| b.insts.iter().map(|i| i.id.0).chain(std::iter::once(b.term.id.0)))
            .max()
            .unwrap_or(0)
    }

    /// Reassigns instruction ids in lexical order. Returns old → new.
    pub fn renumber(&mut self) -> HashMap<InstId, InstId> {
        let mut map = HashMap::new();
        let mut next = 0u32;
        for f in &mut self.functions {
            for b in &mut f.blocks {
                for i in &mut b.insts {
                    map.insert(i.id, InstId(next));
                    i.id = InstId(next);
                    next += 1;
                }
                map.insert(b.term.id, InstId(next));
                b.term.id = InstId(next);
                next += 1;
            }
        }
        map
    }

    /// Locates an instruction or terminator by id: (function, block, index);
    /// index == insts.len() designates the terminator.
    pub fn locate(&self, id: InstId) -> Option<(usize, usize, usize)> {
        for (fi, f) in self.functions.iter().enumerate() {
            for (bi, b) in f.blocks.iter().enumerate() {
                if let Some(ii) = b.insts.iter().position(|i| i.id == id) {
                    return Some((fi, bi, ii));
                }
                if b.term.id == id {
                    return Some((fi, bi, b.insts.len()));
                }
            }
        }
        None
    }

    pub fn inst(&self, id: InstId) -> Option<&Inst> {
        let (fi, bi, ii) = self.locate(id)?;
        self.functions[fi].blocks[bi].insts.get(ii)
    }

    /// Number of instructions and terminators, a proxy for code size.
    pub fn size(&self) -> usize {
        self.functions
            .iter()
            .flat_map(|f| f.blocks.iter())
            .map(|b| b.insts.len() + 1)
            .sum()
    }
}
