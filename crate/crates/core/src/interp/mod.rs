//! Reference interpreter with exact trace recording, optional dynamic
//! taint tracking, and the DFL runtime.
//!
//! A [`Program`] is the module with registers resolved to frame slots; it
//! can be run many times. Each run owns its memory image.

pub mod memory;
pub mod trace;

use std::collections::{BTreeMap, HashMap};

use crate::cfl::{ct_select, SelectScheme};
use crate::dfl::runtime::{stride, SiteLists, StrideOp};
use crate::dfl::{SiteId, HEADER_SIZE, MAGIC};
use crate::intrinsics::{Intrinsic, PREFIX};
use crate::ir::*;

use memory::{Memory, RegionKind, FUNC_BASE, FUNC_STRIDE, HEAP_PREFIX};
pub use trace::{Abort, Access, AccessKind, BlockVisit, DecoyViolation, MemEvent, TaintObs, Trace};

/// Inputs of one run: entry arguments and the secret vector read by `secret k`.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ExecInput {
    pub public: Vec<u64>,
    pub secret: Vec<u64>,
}

impl ExecInput {
    pub fn new(public: Vec<u64>, secret: Vec<u64>) -> Self {
        ExecInput { public, secret }
    }
}

/// Deliberate runtime defects, used to show that the verifier notices them.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Fault {
    /// ct_store writes the old contents back even at the matching location.
    SkipWriteBack,
    /// ct_load/ct_store access the unselected pointer directly, no striding.
    BypassDfl,
}

#[derive(Clone, Debug)]
pub struct InterpConfig {
    pub lambda: u64,
    pub budget: u64,
    pub taint: bool,
    pub record_blocks: bool,
    pub record_accesses: bool,
    pub fault: Option<Fault>,
    pub max_depth: usize,
}

impl Default for InterpConfig {
    fn default() -> Self {
        InterpConfig {
            lambda: 64,
            budget: 10_000_000,
            taint: false,
            record_blocks: false,
            record_accesses: false,
            fault: None,
            max_depth: 200,
        }
    }
}

impl InterpConfig {
    pub fn with_lambda(lambda: u64) -> Self {
        InterpConfig { lambda, ..Default::default() }
    }
}

#[derive(Clone, Copy, Debug)]
enum POp {
    Slot(u32),
    Imm(u64),
}

#[derive(Clone, Debug)]
enum PKind {
    Bin(BinOp, Type, POp, POp),
    Icmp(Pred, POp, POp),
    Select(POp, POp, POp),
    Load(u64, POp),
    Store(u64, POp, POp),
    Gep { base: POp, terms: Vec<(POp, u64)>, offset: u64 },
    Alloca { size: u64, dfl: bool, site: SiteId },
    HeapAlloc { size: u64, dfl: bool, site: SiteId },
    HeapFree { ptr: POp, dfl: bool },
    Call { func: usize, args: Vec<POp> },
    ICall { callee: POp, args: Vec<POp> },
    Sel { scheme: SelectScheme, t: POp, a: POp, b: POp },
    CtLoad { size: u64, p: POp, meta: u32, raw: Option<POp> },
    CtStore { size: u64, v: POp, p: POp, meta: u32, raw: Option<POp> },
    Hook(POp),
    Secret { ty: Type, index: u32 },
    Trap(POp),
}

#[derive(Clone, Debug)]
struct PInst {
    id: InstId,
    dst: Option<u32>,
    kind: PKind,
}

#[derive(Clone, Debug)]
struct PPhi {
    id: InstId,
    dst: u32,
    incoming: Vec<(usize, POp)>,
}

#[derive(Clone, Debug)]
enum PTerm {
    Br(usize),
    CondBr(POp, usize, usize),
    Ret(POp),
}

#[derive(Clone, Debug)]
struct PBlock {
    phis: Vec<PPhi>,
    insts: Vec<PInst>,
    term: PTerm,
    term_id: InstId,
}

#[derive(Clone, Debug)]
struct PFunc {
    name: String,
    nslots: usize,
    params: Vec<(u32, bool)>,
    ret_mask: Type,
    blocks: Vec<PBlock>,
    ipdom: Vec<Option<usize>>,
}

/// A module prepared for repeated execution.
#[derive(Clone, Debug)]
pub struct Program {
    funcs: Vec<PFunc>,
    entry: usize,
    func_by_addr: HashMap<u64, usize>,
    memory: Memory,
    tainted_memory: Memory,
    metas: BTreeMap<u32, crate::dfl::DflAccessMetadata>,
    global_names: Vec<String>,
}

fn func_addr(i: usize) -> u64 {
    FUNC_BASE + FUNC_STRIDE * i as u64
}

impl Program {
    pub fn new(m: &Module) -> Result<Program, Abort> {
        let bad = |msg: String| Abort::Malformed(msg);
        let memory = Memory::with_globals(&m.globals, false);
        let tainted_memory = Memory::with_globals(&m.globals, true);
        let gaddr: HashMap<&str, u64> = m
            .globals
            .iter()
            .enumerate()
            .map(|(i, g)| (g.name.as_str(), memory.regions[i].data))
            .collect();
        let fidx: HashMap<&str, usize> =
            m.functions.iter().enumerate().map(|(i, f)| (f.name.as_str(), i)).collect();
        let entry = *fidx.get(m.entry.as_str()).ok_or_else(|| bad(format!("no entry @{}", m.entry)))?;

        let mut funcs = Vec::new();
        for f in &m.functions {
            let mut slots: HashMap<&str, u32> = HashMap::new();
            for p in &f.params {
                let n = slots.len() as u32;
                slots.insert(&p.name, n);
            }
            for i in f.insts() {
                if let Some(r) = &i.result {
                    let n = slots.len() as u32;
                    slots.entry(r).or_insert(n);
                }
            }
            let labels: HashMap<&str, usize> =
                f.blocks.iter().enumerate().map(|(i, b)| (b.label.as_str(), i)).collect();
            let op = |o: &Operand| -> Result<POp, Abort> {
                Ok(match o {
                    Operand::Reg(r) => POp::Slot(*slots.get(r.as_str()).ok_or_else(|| bad(format!("undefined %{r} in @{}", f.name)))?),
                    Operand::Const(c) => POp::Imm(*c),
                    Operand::Global(g) => {
                        if let Some(a) = gaddr.get(g.as_str()) {
                            POp::Imm(*a)
                        } else if let Some(&i) = fidx.get(g.as_str()) {
                            POp::Imm(func_addr(i))
                        } else {
                            return Err(bad(format!("unknown symbol @{g}")));
                        }
                    }
                })
            };
            let label = |l: &str| labels.get(l).copied().ok_or_else(|| bad(format!("unknown label {l} in @{}", f.name)));
            let mut blocks = Vec::new();
            for b in &f.blocks {
                let mut phis = Vec::new();
                let mut insts = Vec::new();
                for i in &b.insts {
                    let dst = i.result.as_ref().map(|r| slots[r.as_str()]);
                    let kind = match &i.kind {
                        InstKind::Phi { incoming, .. } => {
                            let mut inc = Vec::new();
                            for (l, v) in incoming {
                                inc.push((label(l)?, op(v)?));
                            }
                            phis.push(PPhi { id: i.id, dst: dst.ok_or_else(|| bad("phi without result".into()))?, incoming: inc });
                            continue;
                        }
                        InstKind::Bin { op: o, ty, lhs, rhs } => PKind::Bin(*o, ty.clone(), op(lhs)?, op(rhs)?),
                        InstKind::Icmp { pred, lhs, rhs } => PKind::Icmp(*pred, op(lhs)?, op(rhs)?),
                        InstKind::Select { cond, a, b } => PKind::Select(op(cond)?, op(a)?, op(b)?),
                        InstKind::Load { ty, ptr } => PKind::Load(ty.size(), op(ptr)?),
                        InstKind::Store { ty, val, ptr } => PKind::Store(ty.size(), op(val)?, op(ptr)?),
                        InstKind::Gep { ty, base, indices } => {
                            let (terms, offset) = gep_terms(ty, indices, &op)?;
                            PKind::Gep { base: op(base)?, terms, offset }
                        }
                        InstKind::Alloca { ty, dfl } => PKind::Alloca {
                            size: ty.size(),
                            dfl: *dfl,
                            site: SiteId::Stack { func: f.name.clone(), reg: i.result.clone().unwrap_or_default() },
                        },
                        InstKind::HeapAlloc { ty, dfl } => PKind::HeapAlloc {
                            size: ty.size(),
                            dfl: *dfl,
                            site: SiteId::Heap { func: f.name.clone(), reg: i.result.clone().unwrap_or_default() },
                        },
                        InstKind::HeapFree { ptr, dfl } => PKind::HeapFree { ptr: op(ptr)?, dfl: *dfl },
                        InstKind::Call { callee, args } => {
                            let a: Vec<POp> = args.iter().map(&op).collect::<Result<_, _>>()?;
                            match Intrinsic::parse(callee) {
                                Some(Intrinsic::Select(scheme)) => PKind::Sel { scheme, t: a[0], a: a[1], b: a[2] },
                                Some(Intrinsic::Load(ty)) => PKind::CtLoad {
                                    size: ty.size(),
                                    p: a[0],
                                    meta: meta_const(&args[1])?,
                                    raw: a.get(2).copied(),
                                },
                                Some(Intrinsic::Store(ty)) => PKind::CtStore {
                                    size: ty.size(),
                                    v: a[1],
                                    p: a[0],
                                    meta: meta_const(&args[2])?,
                                    raw: a.get(3).copied(),
                                },
                                Some(Intrinsic::Hook) => PKind::Hook(a[0]),
                                None => {
                                    let func = *fidx.get(callee.as_str()).ok_or_else(|| bad(format!("unknown function @{callee}")))?;
                                    if m.functions[func].params.len() != a.len() {
                                        return Err(bad(format!("arity mismatch calling @{callee}")));
                                    }
                                    PKind::Call { func, args: a }
                                }
                            }
                        }
                        InstKind::ICall { callee, args, .. } => PKind::ICall {
                            callee: op(callee)?,
                            args: args.iter().map(&op).collect::<Result<_, _>>()?,
                        },
                        InstKind::Secret { ty, index } => PKind::Secret { ty: ty.clone(), index: *index },
                        InstKind::Trap { cond } => PKind::Trap(op(cond)?),
                    };
                    insts.push(PInst { id: i.id, dst, kind });
                }
                let term = match &b.term.kind {
                    TermKind::Br(l) => PTerm::Br(label(l)?),
                    TermKind::CondBr { cond, then_label, else_label } => {
                        PTerm::CondBr(op(cond)?, label(then_label)?, label(else_label)?)
                    }
                    TermKind::Ret(v) => PTerm::Ret(op(v)?),
                };
                blocks.push(PBlock { phis, insts, term, term_id: b.term.id });
            }
            let cfg = Cfg::build(f);
            funcs.push(PFunc {
                name: f.name.clone(),
                nslots: slots.len(),
                params: f.params.iter().map(|p| (slots[p.name.as_str()], p.secret)).collect(),
                ret_mask: f.ret.clone(),
                blocks,
                ipdom: cfg.ipdom,
            });
        }
        let func_by_addr = (0..funcs.len()).map(|i| (func_addr(i), i)).collect();
        Ok(Program {
            funcs,
            entry,
            func_by_addr,
            memory,
            tainted_memory,
            metas: m.dfl.clone(),
            global_names: m.globals.iter().map(|g| g.name.clone()).collect(),
        })
    }

    pub fn run(&self, input: &ExecInput, cfg: &InterpConfig) -> Trace {
        let mut ex = Exec {
            prog: self,
            cfg,
            input,
            mem: if cfg.taint { self.tainted_memory.clone() } else { self.memory.clone() },
            lists: SiteLists::default(),
            trace: Trace { lambda: cfg.lambda, ..Default::default() },
            steps: 0,
            frames: 0,
            decoy_abort_recorded: false,
        };
        let f = &self.funcs[self.entry];
        let args: Vec<u64> = {
            let mut pubs = input.public.iter();
            let mut secs = input.secret.iter();
            let mut v = Vec::new();
            for &(_, secret) in &f.params {
                let x = if secret { secs.next() } else { pubs.next() };
                v.push(*x.unwrap_or(&0));
            }
            v
        };
        let taints: Vec<bool> = f.params.iter().map(|p| p.1).collect();
        let res = ex.call(self.entry, args, taints, true, false, 0);
        ex.trace.output = Some(res.map(|(v, _)| v));
        for (name, r) in self.global_names.iter().zip(&ex.mem.regions) {
            ex.trace.globals.insert(name.clone(), r.bytes.clone());
        }
        ex.trace
    }
}

fn meta_const(o: &Operand) -> Result<u32, Abort> {
    match o {
        Operand::Const(c) => Ok(*c as u32),
        _ => Err(Abort::Malformed("dfl record operand must be constant".into())),
    }
}

type OpFn<'a> = dyn Fn(&Operand) -> Result<POp, Abort> + 'a;

fn gep_terms(ty: &Type, indices: &[Operand], op: &OpFn<'_>) -> Result<(Vec<(POp, u64)>, u64), Abort> {
    let mut terms = Vec::new();
    let mut offset = 0u64;
    let add = |o: &Operand, scale: u64, terms: &mut Vec<(POp, u64)>, offset: &mut u64| -> Result<(), Abort> {
        match op(o)? {
            POp::Imm(c) => *offset = offset.wrapping_add(c.wrapping_mul(scale)),
            s => terms.push((s, scale)),
        }
        Ok(())
    };
    let Some((first, rest)) = indices.split_first() else {
        return Ok((terms, offset));
    };
    add(first, ty.size(), &mut terms, &mut offset)?;
    let mut cur = ty;
    for idx in rest {
        match cur {
            Type::Array(elem, _) => {
                add(idx, elem.size(), &mut terms, &mut offset)?;
                cur = elem;
            }
            Type::Struct(fields) => {
                let Operand::Const(k) = idx else {
                    return Err(Abort::Malformed("struct gep index must be constant".into()));
                };
                let off = cur.field_offset(*k as usize).ok_or_else(|| Abort::Malformed("struct index out of range".into()))?;
                offset = offset.wrapping_add(off);
                cur = &fields[*k as usize].ty;
            }
            _ => return Err(Abort::Malformed("gep indexes into a scalar".into())),
        }
    }
    Ok((terms, offset))
}

pub fn interpret(m: &Module, input: &ExecInput, lambda: u64) -> Trace {
    run(m, input, &InterpConfig::with_lambda(lambda))
}

pub fn run(m: &Module, input: &ExecInput, cfg: &InterpConfig) -> Trace {
    match Program::new(m) {
        Ok(p) => p.run(input, cfg),
        Err(e) => Trace { lambda: cfg.lambda, output: Some(Err(e)), ..Default::default() },
    }
}

struct Exec<'a> {
    prog: &'a Program,
    cfg: &'a InterpConfig,
    input: &'a ExecInput,
    mem: Memory,
    lists: SiteLists,
    trace: Trace,
    steps: u64,
    frames: u32,
    decoy_abort_recorded: bool,
}

struct Frame {
    regs: Vec<u64>,
    taint: Vec<bool>,
    taken: bool,
    ctx_base: bool,
    /// Implicit-flow stack: (immediate postdominator that ends the region, taint).
    ctl: Vec<(Option<usize>, bool)>,
    stack: Vec<usize>,
}

impl Frame {
    fn get(&self, o: POp) -> u64 {
        match o {
            POp::Slot(s) => self.regs[s as usize],
            POp::Imm(c) => c,
        }
    }

    fn tainted(&self, o: POp) -> bool {
        match o {
            POp::Slot(s) => self.taint.get(s as usize).copied().unwrap_or(false),
            POp::Imm(_) => false,
        }
    }

    fn ctx(&self) -> bool {
        self.ctx_base || !self.ctl.is_empty()
    }
}

fn is_reserved_region(mem: &Memory, ri: usize) -> bool {
    matches!(&mem.regions[ri].site, SiteId::Global(g) if g.starts_with(PREFIX))
}

impl<'a> Exec<'a> {
    fn step(&mut self, id: InstId) -> Result<(), Abort> {
        self.steps += 1;
        if self.steps > self.cfg.budget {
            return Err(Abort::Budget);
        }
        self.trace.insts.push(id);
        Ok(())
    }

    fn event(&mut self, kind: AccessKind, addr: u64, inst: InstId) {
        self.trace.events.push(MemEvent { kind, addr, inst });
    }

    fn log_access(&mut self, inst: InstId, kind: AccessKind, addr: u64, size: u64, ri: Option<usize>, taken: bool) {
        if !self.cfg.record_accesses {
            return;
        }
        let target = ri.map(|r| {
            let reg = &self.mem.regions[r];
            (reg.site.clone(), addr.wrapping_sub(reg.data))
        });
        self.trace.accesses.push(Access { inst, kind, addr, size, target, taken });
    }

    fn sink(&mut self, set: fn(&mut TaintObs) -> &mut std::collections::BTreeSet<InstId>, id: InstId, func: &str) {
        set(&mut self.trace.taint).insert(id);
        self.trace.taint.functions.insert(func.to_string());
    }

    #[allow(clippy::too_many_arguments)]
    fn call(&mut self, fi: usize, args: Vec<u64>, arg_taint: Vec<bool>, taken: bool, ctx: bool, depth: usize) -> Result<(u64, bool), Abort> {
        if depth > self.cfg.max_depth {
            return Err(Abort::StackOverflow);
        }
        let prog = self.prog;
        let f = &prog.funcs[fi];
        let mut fr = Frame {
            regs: vec![0; f.nslots],
            taint: if self.cfg.taint { vec![false; f.nslots] } else { Vec::new() },
            taken,
            ctx_base: ctx,
            ctl: Vec::new(),
            stack: Vec::new(),
        };
        for (i, &(slot, secret)) in f.params.iter().enumerate() {
            fr.regs[slot as usize] = args.get(i).copied().unwrap_or(0);
            if self.cfg.taint {
                fr.taint[slot as usize] = secret || arg_taint.get(i).copied().unwrap_or(false);
            }
        }
        let serial = self.frames;
        self.frames += 1;
        let res = self.body(fi, &mut fr, serial, depth);
        if let Err(e) = &res {
            if !fr.taken && !self.decoy_abort_recorded {
                self.decoy_abort_recorded = true;
                self.trace.decoy.push(DecoyViolation::Abort(e.clone()));
            }
        }
        // Stack objects die with the frame, newest first.
        for &ri in fr.stack.iter().rev() {
            if self.mem.regions[ri].dfl {
                self.unlink(ri, InstId(u32::MAX));
            }
            self.mem.regions[ri].live = false;
        }
        res.map(|(v, t)| (f.ret_mask.mask(v), t))
    }

    fn body(&mut self, fi: usize, fr: &mut Frame, serial: u32, depth: usize) -> Result<(u64, bool), Abort> {
        let prog = self.prog;
        let f = &prog.funcs[fi];
        let taint_on = self.cfg.taint;
        let mut bi = 0usize;
        let mut pred = usize::MAX;
        loop {
            let blk = &f.blocks[bi];
            let mut popped = false;
            if taint_on {
                while let Some(&(pd, t)) = fr.ctl.last() {
                    if pd != Some(bi) {
                        break;
                    }
                    popped |= t;
                    fr.ctl.pop();
                }
            }
            if self.cfg.record_blocks {
                self.trace.blocks.push(BlockVisit { frame: serial, func: fi as u32, block: bi as u32 });
            }
            // Phis read their operands simultaneously.
            let mut vals = Vec::with_capacity(blk.phis.len());
            for phi in &blk.phis {
                self.step(phi.id)?;
                let Some(&(_, v)) = phi.incoming.iter().find(|(p, _)| *p == pred) else {
                    return Err(Abort::Malformed(format!("phi {} has no edge from predecessor", phi.id)));
                };
                vals.push((phi.dst, fr.get(v), taint_on && (fr.tainted(v) || popped || fr.ctx())));
            }
            for (d, v, t) in vals {
                fr.regs[d as usize] = v;
                if taint_on {
                    fr.taint[d as usize] = t;
                }
            }
            for inst in &blk.insts {
                self.step(inst.id)?;
                self.exec(f, fr, inst, depth)?;
            }
            self.step(blk.term_id)?;
            match blk.term {
                PTerm::Br(t) => {
                    pred = bi;
                    bi = t;
                }
                PTerm::CondBr(c, t, e) => {
                    if taint_on && fr.tainted(c) {
                        self.sink(|o| &mut o.branches, blk.term_id, &f.name);
                        let pd = f.ipdom[bi];
                        if fr.ctl.last().map(|x| x.0) != Some(pd) {
                            fr.ctl.push((pd, true));
                        }
                    }
                    pred = bi;
                    bi = if fr.get(c) != 0 { t } else { e };
                }
                PTerm::Ret(v) => {
                    let t = taint_on && (fr.tainted(v) || fr.ctx());
                    return Ok((fr.get(v), t));
                }
            }
        }
    }

    fn set(&mut self, fr: &mut Frame, dst: Option<u32>, v: u64, t: bool) {
        if let Some(d) = dst {
            fr.regs[d as usize] = v;
            if self.cfg.taint {
                fr.taint[d as usize] = t || fr.ctx();
            }
        }
    }

    fn exec(&mut self, f: &PFunc, fr: &mut Frame, inst: &PInst, depth: usize) -> Result<(), Abort> {
        let id = inst.id;
        let taint_on = self.cfg.taint;
        match &inst.kind {
            PKind::Bin(op, ty, a, b) => {
                let (x, y) = (fr.get(*a), fr.get(*b));
                let t = fr.tainted(*a) || fr.tainted(*b);
                if taint_on && op.is_div_rem() && (t || fr.ctx()) {
                    self.sink(|o| &mut o.divrem, id, &f.name);
                }
                let v = match op {
                    BinOp::Add => x.wrapping_add(y),
                    BinOp::Sub => x.wrapping_sub(y),
                    BinOp::Mul => x.wrapping_mul(y),
                    BinOp::And => x & y,
                    BinOp::Or => x | y,
                    BinOp::Xor => x ^ y,
                    BinOp::Shl => {
                        if y >= ty.bits() as u64 {
                            0
                        } else {
                            x << y
                        }
                    }
                    BinOp::Lshr => {
                        if y >= ty.bits() as u64 {
                            0
                        } else {
                            ty.mask(x) >> y
                        }
                    }
                    BinOp::Div | BinOp::Rem => {
                        let y = ty.mask(y);
                        if y == 0 {
                            return Err(Abort::DivByZero { inst: id });
                        }
                        if *op == BinOp::Div {
                            ty.mask(x) / y
                        } else {
                            ty.mask(x) % y
                        }
                    }
                };
                self.set(fr, inst.dst, ty.mask(v), t);
            }
            PKind::Icmp(p, a, b) => {
                let v = p.eval(fr.get(*a), fr.get(*b)) as u64;
                let t = fr.tainted(*a) || fr.tainted(*b);
                self.set(fr, inst.dst, v, t);
            }
            PKind::Select(c, a, b) => {
                let v = if fr.get(*c) != 0 { fr.get(*a) } else { fr.get(*b) };
                let t = fr.tainted(*c) || fr.tainted(*a) || fr.tainted(*b);
                self.set(fr, inst.dst, v, t);
            }
            PKind::Sel { scheme, t, a, b } => {
                let tw = scheme.encode_taken(fr.get(*t) != 0);
                let v = ct_select(*scheme, tw, fr.get(*a), fr.get(*b));
                let tt = fr.tainted(*t) || fr.tainted(*a) || fr.tainted(*b);
                self.set(fr, inst.dst, v, tt);
            }
            PKind::Load(size, p) => {
                let addr = fr.get(*p);
                let at = fr.tainted(*p);
                if taint_on && (at || fr.ctx()) {
                    self.sink(|o| &mut o.reads, id, &f.name);
                }
                let ri = self.raw_access(fr.taken, id, addr, *size, AccessKind::Read)?;
                let v = self.mem.read(ri, addr, *size);
                let t = at || (taint_on && self.mem.shadow(ri, addr, *size));
                self.set(fr, inst.dst, v, t);
            }
            PKind::Store(size, v, p) => {
                let addr = fr.get(*p);
                if taint_on && (fr.tainted(*p) || fr.ctx()) {
                    self.sink(|o| &mut o.writes, id, &f.name);
                }
                let ri = self.raw_access(fr.taken, id, addr, *size, AccessKind::Write)?;
                let val = fr.get(*v);
                if !fr.taken && !is_reserved_region(&self.mem, ri) && self.mem.read(ri, addr, *size) != val & mask_bytes(*size) {
                    self.trace.decoy.push(DecoyViolation::StoreChangedMemory { inst: id, addr });
                }
                self.mem.write(ri, addr, *size, val);
                if taint_on {
                    let t = fr.tainted(*v);
                    self.mem.set_shadow(ri, addr, *size, t);
                }
            }
            PKind::Gep { base, terms, offset } => {
                let mut a = fr.get(*base).wrapping_add(*offset);
                let mut t = fr.tainted(*base);
                for (o, scale) in terms {
                    a = a.wrapping_add(fr.get(*o).wrapping_mul(*scale));
                    t |= fr.tainted(*o);
                }
                self.set(fr, inst.dst, a, t);
            }
            PKind::Alloca { size, dfl, site } => {
                let header = if *dfl { HEADER_SIZE } else { 0 };
                let ri = self.mem.alloc(RegionKind::Stack, site.clone(), *size, header, *dfl);
                if *dfl {
                    self.link(ri, id);
                }
                fr.stack.push(ri);
                let d = self.mem.regions[ri].data;
                self.set(fr, inst.dst, d, false);
            }
            PKind::HeapAlloc { size, dfl, site } => {
                let header = if *dfl { HEADER_SIZE } else { HEAP_PREFIX };
                let ri = self.mem.alloc(RegionKind::Heap, site.clone(), *size, header, *dfl);
                if *dfl {
                    self.link(ri, id);
                } else {
                    let base = self.mem.regions[ri].base;
                    self.mem.write(ri, base, 8, *size);
                    self.event(AccessKind::Write, base, id);
                }
                let d = self.mem.regions[ri].data;
                self.set(fr, inst.dst, d, false);
            }
            PKind::HeapFree { ptr, dfl } => {
                let p = fr.get(*ptr);
                self.free(id, p, *dfl)?;
            }
            PKind::Call { func, args } => {
                let vals: Vec<u64> = args.iter().map(|a| fr.get(*a)).collect();
                let ts: Vec<bool> = args.iter().map(|a| fr.tainted(*a)).collect();
                let (v, t) = self.call(*func, vals, ts, fr.taken, taint_on && fr.ctx(), depth + 1)?;
                self.set(fr, inst.dst, v, t);
            }
            PKind::ICall { callee, args } => {
                let addr = fr.get(*callee);
                let Some(&func) = self.prog.func_by_addr.get(&addr) else {
                    return Err(Abort::BadCallTarget { inst: id, addr });
                };
                if self.prog.funcs[func].params.len() != args.len() {
                    return Err(Abort::BadCallTarget { inst: id, addr });
                }
                self.trace.calls.push((id, self.prog.funcs[func].name.clone()));
                let vals: Vec<u64> = args.iter().map(|a| fr.get(*a)).collect();
                let ts: Vec<bool> = args.iter().map(|a| fr.tainted(*a)).collect();
                let ctx = taint_on && (fr.ctx() || fr.tainted(*callee));
                let (v, t) = self.call(func, vals, ts, fr.taken, ctx, depth + 1)?;
                self.set(fr, inst.dst, v, t);
            }
            PKind::CtLoad { size, p, meta, raw } => {
                let (v, t) = self.ct_access(fr, id, *size, *p, *raw, *meta, None)?;
                if taint_on && (t || fr.ctx()) {
                    self.sink(|o| &mut o.reads, id, &f.name);
                }
                self.set(fr, inst.dst, v, t);
            }
            PKind::CtStore { size, v, p, meta, raw } => {
                let (_, t) = self.ct_access(fr, id, *size, *p, *raw, *meta, Some(*v))?;
                if taint_on && (t || fr.ctx()) {
                    self.sink(|o| &mut o.writes, id, &f.name);
                }
            }
            PKind::Hook(t) => fr.taken = fr.get(*t) != 0,
            PKind::Secret { ty, index } => {
                let Some(&v) = self.input.secret.get(*index as usize) else {
                    return Err(Abort::MissingInput { what: format!("secret {index}") });
                };
                self.set(fr, inst.dst, ty.mask(v), true);
            }
            PKind::Trap(c) => {
                if fr.get(*c) != 0 {
                    return Err(Abort::Trap { inst: id });
                }
            }
        }
        Ok(())
    }

    /// Checks and logs a plain load/store, returning the target region.
    fn raw_access(&mut self, taken: bool, id: InstId, addr: u64, size: u64, kind: AccessKind) -> Result<usize, Abort> {
        self.event(kind, addr, id);
        let ri = self.mem.find(addr, size);
        if !taken && !ri.is_some_and(|r| is_reserved_region(&self.mem, r)) {
            self.trace.decoy.push(DecoyViolation::RawAccess { inst: id, addr });
        }
        self.log_access(id, kind, addr, size, ri, taken);
        ri.ok_or(Abort::OutOfBounds { inst: id, addr })
    }

    #[allow(clippy::too_many_arguments)]
    fn ct_access(&mut self, fr: &Frame, id: InstId, size: u64, p: POp, raw: Option<POp>, meta: u32, val: Option<POp>) -> Result<(u64, bool), Abort> {
        let addr = fr.get(p);
        let raw_addr = raw.map_or(addr, |r| fr.get(r));
        let ptaint = fr.tainted(p) || raw.is_some_and(|r| fr.tainted(r));
        let kind = if val.is_some() { AccessKind::Write } else { AccessKind::Read };
        if self.cfg.fault == Some(Fault::BypassDfl) {
            let ri = self.raw_access(fr.taken, id, raw_addr, size, kind)?;
            return Ok(match val {
                Some(v) => {
                    self.mem.write(ri, raw_addr, size, fr.get(v));
                    (0, ptaint)
                }
                None => (self.mem.read(ri, raw_addr, size), ptaint),
            });
        }
        let Some(md) = self.prog.metas.get(&meta) else {
            return Err(Abort::Malformed(format!("unknown dfl record {meta}")));
        };
        let op = match val {
            Some(v) => StrideOp::Store { value: fr.get(v), drop_value: self.cfg.fault == Some(Fault::SkipWriteBack) },
            None => StrideOp::Load,
        };
        let out = stride(&mut self.mem, &self.lists, &mut self.trace.events, id, md, size, addr, raw_addr, op)?;
        self.trace.touches += out.touches;
        *self.trace.touches_by_inst.entry(id).or_default() += out.touches;
        self.trace.cost += out.cost;
        let mut t = ptaint;
        if let Some((ri, a)) = out.matched {
            self.log_access(id, kind, a, size, Some(ri), fr.taken);
            if self.cfg.taint {
                match val {
                    Some(v) => self.mem.set_shadow(ri, a, size, fr.tainted(v)),
                    None => t |= self.mem.shadow(ri, a, size),
                }
            }
        }
        Ok((out.value, t))
    }

    /// Registers a fresh interposed object at the tail of its site list.
    fn link(&mut self, ri: usize, id: InstId) {
        let site = self.mem.regions[ri].site.clone();
        let list = self.lists.lists.entry(site).or_default();
        let prev = list.last().copied();
        let head = list.first().copied().unwrap_or(ri);
        list.push(ri);
        let base = self.mem.regions[ri].base;
        let prev_data = prev.map_or(0, |p| self.mem.regions[p].data);
        let head_data = self.mem.regions[head].data;
        for (k, v) in [0, prev_data, head_data, MAGIC].into_iter().enumerate() {
            let a = base + 8 * k as u64;
            self.mem.write(ri, a, 8, v);
            self.event(AccessKind::Write, a, id);
        }
        if let Some(p) = prev {
            let pb = self.mem.regions[p].base;
            let d = self.mem.regions[ri].data;
            self.mem.write(p, pb, 8, d);
            self.event(AccessKind::Write, pb, id);
        }
    }

    fn unlink(&mut self, ri: usize, id: InstId) {
        let site = self.mem.regions[ri].site.clone();
        let Some(list) = self.lists.lists.get_mut(&site) else { return };
        let Some(pos) = list.iter().position(|&r| r == ri) else { return };
        let prev = pos.checked_sub(1).map(|i| list[i]);
        let next = list.get(pos + 1).copied();
        list.remove(pos);
        let next_data = next.map_or(0, |n| self.mem.regions[n].data);
        let prev_data = prev.map_or(0, |p| self.mem.regions[p].data);
        if let Some(p) = prev {
            let pb = self.mem.regions[p].base;
            self.mem.write(p, pb, 8, next_data);
            self.event(AccessKind::Write, pb, id);
        }
        if let Some(n) = next {
            let nb = self.mem.regions[n].base + 8;
            self.mem.write(n, nb, 8, prev_data);
            self.event(AccessKind::Write, nb, id);
        }
    }

    fn free(&mut self, id: InstId, p: u64, dfl: bool) -> Result<(), Abort> {
        if p == 0 {
            return Ok(());
        }
        let Some(ri) = self.mem.region_at(p) else {
            return Err(Abort::InvalidFree { inst: id, addr: p });
        };
        let r = &self.mem.regions[ri];
        if r.kind != RegionKind::Heap || r.data != p {
            return Err(Abort::InvalidFree { inst: id, addr: p });
        }
        if !r.live {
            return Err(Abort::DoubleFree { inst: id, addr: p });
        }
        // Both chunk layouts keep a readable word at p - 8: the magic of an
        // interposed header or the size field of a plain chunk.
        let tag = self.mem.read(ri, p - 8, 8);
        self.event(AccessKind::Read, p - 8, id);
        if dfl && tag == MAGIC {
            self.unlink(ri, id);
        }
        self.mem.regions[ri].live = false;
        Ok(())
    }
}

fn mask_bytes(size: u64) -> u64 {
    if size >= 8 {
        u64::MAX
    } else {
        (1u64 << (8 * size)) - 1
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ir::parse_module;

    fn run_src(src: &str, input: ExecInput) -> Trace {
        interpret(&parse_module(src).unwrap(), &input, 64)
    }

    #[test]
    fn ret_zero_has_no_memory_events() {
        let t = run_src("func @main() -> i64 {\nentry:\n  ret 0\n}", ExecInput::default());
        assert_eq!(t.result(), Ok(0));
        assert!(t.events.is_empty());
        assert_eq!(t.insts.len(), 1);
    }

    #[test]
    fn deterministic_traces() {
        let src = "global @g : [4 x i64]\nfunc @main(%a: i64) -> i64 {\nentry:\n  %p = gep [4 x i64] @g, 0, %a\n  store i64 7, %p\n  %v = load i64, %p\n  ret %v\n}";
        let a = run_src(src, ExecInput::new(vec![2], vec![]));
        let b = run_src(src, ExecInput::new(vec![2], vec![]));
        assert_eq!(a, b);
        assert_eq!(a.result(), Ok(7));
        assert_eq!(a.events.len(), 2);
        assert_eq!(a.events[0].addr, memory::GLOBAL_BASE + 16);
    }

    #[test]
    fn division_by_zero_and_oob_abort_distinctly() {
        let d = run_src("func @main(%a: i64) -> i64 {\nentry:\n  %q = div i64 5, %a\n  ret %q\n}", ExecInput::new(vec![0], vec![]));
        let g = "global @g : [2 x i8]\nfunc @main(%a: i64) -> i64 {\nentry:\n  %p = gep i8 @g, %a\n  %v = load i8, %p\n  ret %v\n}";
        let o = run_src(g, ExecInput::new(vec![2], vec![]));
        let (Err(e1), Err(e2)) = (d.result(), o.result()) else { panic!() };
        assert_ne!(e1.code(), e2.code());
        assert!(matches!(e2, Abort::OutOfBounds { .. }));
    }

    #[test]
    fn budget_stops_divergent_loop() {
        let src = "func @main() -> i64 {\nentry:\n  br l\nl:\n  br l\n}";
        let m = parse_module(src).unwrap();
        let t = run(&m, &ExecInput::default(), &InterpConfig { budget: 1000, ..Default::default() });
        assert_eq!(t.result(), Err(Abort::Budget));
    }

    #[test]
    fn interposed_heap_object_lifecycle() {
        let src = "func @main() -> i64 {\nentry:\n  %p = heapalloc dfl i64\n  %q = heapalloc i64\n  store i64 5, %p\n  heapfree dfl %p\n  heapfree dfl %q\n  ret 0\n}";
        let t = run_src(src, ExecInput::default());
        assert_eq!(t.result(), Ok(0));
        let twice = "func @main() -> i64 {\nentry:\n  %p = heapalloc dfl i64\n  heapfree dfl %p\n  heapfree dfl %p\n  ret 0\n}";
        assert!(matches!(run_src(twice, ExecInput::default()).result(), Err(Abort::DoubleFree { .. })));
    }

    #[test]
    fn taint_follows_data_and_control() {
        let src = "global @t : [16 x i8]\nfunc @main(%n: i64) -> i64 {\nentry:\n  %s = secret i64 0\n  %c = icmp lt %s, 4\n  condbr %c, a, j\na:\n  %p = gep i8 @t, %n\n  %v = load i8, %p\n  br j\nj:\n  %r = phi i64 [entry: 0, a: 1]\n  %q = gep i8 @t, %s\n  %w = load i8, %q\n  ret %r\n}";
        let m = parse_module(src).unwrap();
        let cfg = InterpConfig { taint: true, ..Default::default() };
        let t = run(&m, &ExecInput::new(vec![3], vec![1]), &cfg);
        assert_eq!(t.taint.branches.len(), 1);
        // The load under the secret branch and the secret-indexed load.
        assert_eq!(t.taint.reads.len(), 2);
    }
}
