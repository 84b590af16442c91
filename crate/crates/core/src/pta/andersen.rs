//! Inclusion-based (Andersen) points-to solving.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use super::*;
use crate::intrinsics::Intrinsic;
use crate::ir::{InstKind, Module, TermKind};

/// Distinct exact offsets kept per object before widening to [`Off::Any`].
const MAX_OFFSETS: usize = 64;

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
enum Node {
    Reg(String, String),
    Content(Obj),
    Ret(String),
    Temp(usize),
}

#[derive(Clone, Debug)]
enum Constraint {
    Base(usize, Loc),
    Copy(usize, usize),
    Gep(usize, usize, GepShape),
    Arith(usize, usize),
    Load(usize, usize),
    Store(usize, usize),
    ICall { ptr: usize, args: Vec<Option<usize>>, arg_types: Vec<Option<Type>>, ret: Option<usize>, ret_ty: Type },
}

struct System {
    nodes: Vec<Node>,
    index: HashMap<Node, usize>,
    cons: Vec<Constraint>,
    objects: BTreeMap<SiteId, AbstractObject>,
    /// Function signatures: (param types, return type).
    sigs: BTreeMap<String, (Vec<Type>, Type)>,
    params: BTreeMap<String, Vec<usize>>,
    rets: BTreeMap<String, usize>,
}

impl System {
    fn node(&mut self, n: Node) -> usize {
        if let Some(&i) = self.index.get(&n) {
            return i;
        }
        self.nodes.push(n.clone());
        self.index.insert(n, self.nodes.len() - 1);
        self.nodes.len() - 1
    }

    fn reg(&mut self, f: &str, r: &str) -> usize {
        self.node(Node::Reg(f.to_string(), r.to_string()))
    }

    /// Node holding the value of `o`, if it can carry an address.
    fn operand(&mut self, f: &str, o: &Operand) -> Option<usize> {
        match o {
            Operand::Reg(r) => Some(self.reg(f, r)),
            Operand::Global(g) => {
                let t = self.nodes.len();
                let n = self.node(Node::Temp(t));
                let loc = global_loc(g, &self.objects);
                self.cons.push(Constraint::Base(n, loc));
                Some(n)
            }
            Operand::Const(_) => None,
        }
    }

    fn obj_size(&self, o: &Obj) -> Option<u64> {
        match o {
            Obj::Site(s) => self.objects.get(s).map(|a| a.size),
            Obj::Func(_) => None,
        }
    }

    fn content(&self, o: &Obj) -> Option<usize> {
        self.index.get(&Node::Content(o.clone())).copied()
    }
}

fn build(m: &Module) -> System {
    let mut objects = BTreeMap::new();
    for g in &m.globals {
        let site = SiteId::Global(g.name.clone());
        objects.insert(site.clone(), AbstractObject { site, ty: g.ty.clone(), size: g.ty.size() });
    }
    for f in &m.functions {
        for i in f.insts() {
            let (site, ty) = match (&i.kind, &i.result) {
                (InstKind::Alloca { ty, .. }, Some(r)) => (SiteId::Stack { func: f.name.clone(), reg: r.clone() }, ty),
                (InstKind::HeapAlloc { ty, .. }, Some(r)) => (SiteId::Heap { func: f.name.clone(), reg: r.clone() }, ty),
                _ => continue,
            };
            objects.insert(site.clone(), AbstractObject { site, ty: ty.clone(), size: ty.size() });
        }
    }
    let sigs = m.functions.iter().map(|f| (f.name.clone(), (f.params.iter().map(|p| p.ty.clone()).collect(), f.ret.clone()))).collect();
    let mut s = System { nodes: Vec::new(), index: HashMap::new(), cons: Vec::new(), objects, sigs, params: BTreeMap::new(), rets: BTreeMap::new() };
    for f in &m.functions {
        let ps = f.params.iter().map(|p| s.reg(&f.name, &p.name)).collect();
        s.params.insert(f.name.clone(), ps);
        let r = s.node(Node::Ret(f.name.clone()));
        s.rets.insert(f.name.clone(), r);
    }
    // Content nodes exist up front so that loads can find them.
    let objs: Vec<Obj> = s.objects.keys().map(|k| Obj::Site(k.clone())).collect();
    for o in objs {
        s.node(Node::Content(o));
    }
    for f in &m.functions {
        let types = f.reg_types(m);
        let fname = f.name.as_str();
        for i in f.insts() {
            let dst = i.result.as_ref().map(|r| s.reg(fname, r));
            match &i.kind {
                InstKind::Alloca { .. } | InstKind::HeapAlloc { .. } => {
                    let site = match &i.kind {
                        InstKind::Alloca { .. } => SiteId::Stack { func: f.name.clone(), reg: i.result.clone().unwrap() },
                        _ => SiteId::Heap { func: f.name.clone(), reg: i.result.clone().unwrap() },
                    };
                    s.cons.push(Constraint::Base(dst.unwrap(), Loc { obj: Obj::Site(site), off: Off::Exact(0) }));
                }
                InstKind::Phi { incoming, .. } => {
                    for (_, v) in incoming {
                        if let Some(src) = s.operand(fname, v) {
                            s.cons.push(Constraint::Copy(dst.unwrap(), src));
                        }
                    }
                }
                InstKind::Select { a, b, .. } => {
                    for v in [a, b] {
                        if let Some(src) = s.operand(fname, v) {
                            s.cons.push(Constraint::Copy(dst.unwrap(), src));
                        }
                    }
                }
                InstKind::Bin { lhs, rhs, .. } => {
                    for v in [lhs, rhs] {
                        if let Some(src) = s.operand(fname, v) {
                            s.cons.push(Constraint::Arith(dst.unwrap(), src));
                        }
                    }
                }
                InstKind::Gep { ty, base, indices } => {
                    let Some(src) = s.operand(fname, base) else { continue };
                    match GepShape::of(ty, indices) {
                        Some(shape) => s.cons.push(Constraint::Gep(dst.unwrap(), src, shape)),
                        None => s.cons.push(Constraint::Arith(dst.unwrap(), src)),
                    }
                }
                InstKind::Load { ptr, .. } => {
                    if let Some(p) = s.operand(fname, ptr) {
                        s.cons.push(Constraint::Load(dst.unwrap(), p));
                    }
                }
                InstKind::Store { val, ptr, .. } => {
                    if let (Some(p), Some(v)) = (s.operand(fname, ptr), s.operand(fname, val)) {
                        s.cons.push(Constraint::Store(p, v));
                    }
                }
                InstKind::Call { callee, args } => {
                    if Intrinsic::parse(callee).is_some() {
                        continue;
                    }
                    let Some(g) = m.function(callee) else { continue };
                    for (p, a) in g.params.iter().zip(args) {
                        if let Some(src) = s.operand(fname, a) {
                            let pn = s.reg(&g.name, &p.name);
                            s.cons.push(Constraint::Copy(pn, src));
                        }
                    }
                    if let Some(d) = dst {
                        let rn = s.node(Node::Ret(g.name.clone()));
                        s.cons.push(Constraint::Copy(d, rn));
                    }
                }
                InstKind::ICall { ret, callee, args } => {
                    let Some(ptr) = s.operand(fname, callee) else { continue };
                    let arg_nodes = args.iter().map(|a| s.operand(fname, a)).collect();
                    let arg_types = args
                        .iter()
                        .map(|a| match a {
                            Operand::Reg(r) => types.get(r).cloned(),
                            Operand::Global(_) => Some(Type::Addr),
                            Operand::Const(_) => None,
                        })
                        .collect();
                    s.cons.push(Constraint::ICall { ptr, args: arg_nodes, arg_types, ret: dst, ret_ty: ret.clone() });
                }
                InstKind::HeapFree { .. } | InstKind::Icmp { .. } | InstKind::Secret { .. } | InstKind::Trap { .. } => {}
            }
        }
        for b in &f.blocks {
            if let TermKind::Ret(v) = &b.term.kind {
                if let Some(src) = s.operand(fname, v) {
                    let rn = s.node(Node::Ret(f.name.clone()));
                    s.cons.push(Constraint::Copy(rn, src));
                }
            }
        }
    }
    s
}

/// Whether `callee` fits an indirect call of this shape.
fn compatible(sig: &(Vec<Type>, Type), arg_types: &[Option<Type>], ret: &Type) -> bool {
    sig.0.len() == arg_types.len()
        && sig.1.size() == ret.size()
        && sig.0.iter().zip(arg_types).all(|(p, a)| a.as_ref().is_none_or(|a| a.size() == p.size()))
}

/// Adds `locs` into `set`, widening objects with too many offsets.
fn add_all(set: &mut BTreeSet<Loc>, locs: impl IntoIterator<Item = Loc>) -> bool {
    let before = set.clone();
    for l in locs {
        if set.iter().any(|x| x.obj == l.obj && x.off == Off::Any) {
            continue;
        }
        if l.off == Off::Any {
            set.retain(|x| x.obj != l.obj);
        }
        set.insert(l.clone());
        if set.iter().filter(|x| x.obj == l.obj).count() > MAX_OFFSETS {
            set.retain(|x| x.obj != l.obj);
            set.insert(Loc { obj: l.obj.clone(), off: Off::Any });
        }
    }
    *set != before
}

/// Effects of one constraint under the current solution, as (node, locs).
fn effects(s: &System, pts: &[BTreeSet<Loc>], c: &Constraint, extra: &mut Vec<Constraint>) -> Vec<(usize, Vec<Loc>)> {
    match c {
        Constraint::Base(n, l) => vec![(*n, vec![l.clone()])],
        Constraint::Copy(d, src) => vec![(*d, pts[*src].iter().cloned().collect())],
        Constraint::Gep(d, src, shape) => {
            vec![(*d, pts[*src].iter().map(|l| Loc { obj: l.obj.clone(), off: shape.apply(l.off, s.obj_size(&l.obj)) }).collect())]
        }
        Constraint::Arith(d, src) => vec![(*d, pts[*src].iter().map(|l| Loc { obj: l.obj.clone(), off: Off::Any }).collect())],
        Constraint::Load(d, p) => {
            let mut out = Vec::new();
            for l in &pts[*p] {
                if let Some(cn) = s.content(&l.obj) {
                    out.extend(pts[cn].iter().cloned());
                }
            }
            vec![(*d, out)]
        }
        Constraint::Store(p, v) => {
            let mut out = Vec::new();
            for l in &pts[*p] {
                if let Some(cn) = s.content(&l.obj) {
                    out.push((cn, pts[*v].iter().cloned().collect()));
                }
            }
            out
        }
        Constraint::ICall { ptr, args, arg_types, ret, ret_ty } => {
            for l in &pts[*ptr] {
                let Obj::Func(g) = &l.obj else { continue };
                let Some(sig) = s.sigs.get(g) else { continue };
                if !compatible(sig, arg_types, ret_ty) {
                    continue;
                }
                for (a, pn) in args.iter().zip(&s.params[g]) {
                    if let Some(a) = a {
                        extra.push(Constraint::Copy(*pn, *a));
                    }
                }
                if let Some(d) = ret {
                    extra.push(Constraint::Copy(*d, s.rets[g]));
                }
            }
            vec![]
        }
    }
}

/// Solves with a worklist over dependency lists.
fn solve_worklist(s: &System) -> Vec<BTreeSet<Loc>> {
    let n = s.nodes.len();
    let mut pts: Vec<BTreeSet<Loc>> = vec![BTreeSet::new(); n];
    let mut cons = s.cons.clone();
    let mut readers: Vec<Vec<usize>> = vec![Vec::new(); n];
    let mut loads_of_content: Vec<Vec<usize>> = vec![Vec::new(); n];
    let register = |ci: usize, c: &Constraint, readers: &mut Vec<Vec<usize>>| match c {
        Constraint::Base(..) => {}
        Constraint::Copy(_, src) | Constraint::Gep(_, src, _) | Constraint::Arith(_, src) => readers[*src].push(ci),
        Constraint::Load(_, p) => readers[*p].push(ci),
        Constraint::Store(p, v) => {
            readers[*p].push(ci);
            readers[*v].push(ci);
        }
        Constraint::ICall { ptr, .. } => readers[*ptr].push(ci),
    };
    for (ci, c) in cons.iter().enumerate() {
        register(ci, c, &mut readers);
    }
    let mut work: Vec<usize> = (0..cons.len()).collect();
    let mut seen_copies: BTreeSet<(usize, usize)> = cons
        .iter()
        .filter_map(|c| match c {
            Constraint::Copy(d, s) => Some((*d, *s)),
            _ => None,
        })
        .collect();
    while let Some(ci) = work.pop() {
        let c = cons[ci].clone();
        if let Constraint::Load(_, p) = &c {
            for l in pts[*p].clone() {
                if let Some(cn) = s.content(&l.obj) {
                    if !loads_of_content[cn].contains(&ci) {
                        loads_of_content[cn].push(ci);
                    }
                }
            }
        }
        let mut extra = Vec::new();
        for (node, locs) in effects(s, &pts, &c, &mut extra) {
            if add_all(&mut pts[node], locs) {
                work.extend(readers[node].iter().copied());
                work.extend(loads_of_content[node].iter().copied());
            }
        }
        for e in extra {
            if let Constraint::Copy(d, src) = e {
                if seen_copies.insert((d, src)) {
                    cons.push(e.clone());
                    let idx = cons.len() - 1;
                    register(idx, &e, &mut readers);
                    work.push(idx);
                }
            }
        }
    }
    pts
}

/// Iterates every constraint until nothing changes. Slow, but obviously a
/// fixpoint; used as a test oracle.
fn solve_naive(s: &System) -> Vec<BTreeSet<Loc>> {
    let mut pts: Vec<BTreeSet<Loc>> = vec![BTreeSet::new(); s.nodes.len()];
    let mut cons = s.cons.clone();
    loop {
        let mut changed = false;
        let mut extra = Vec::new();
        for c in &cons {
            for (node, locs) in effects(s, &pts, c, &mut extra) {
                changed |= add_all(&mut pts[node], locs);
            }
        }
        for e in extra {
            if let Constraint::Copy(d, src) = e {
                if !cons.iter().any(|c| matches!(c, Constraint::Copy(a, b) if *a == d && *b == src)) {
                    cons.push(e);
                    changed = true;
                }
            }
        }
        if !changed {
            return pts;
        }
    }
}

fn assemble(m: &Module, s: &System, pts: Vec<BTreeSet<Loc>>) -> PointsToSolution {
    let mut sol = PointsToSolution { objects: s.objects.clone(), ..Default::default() };
    for (i, n) in s.nodes.iter().enumerate() {
        match n {
            Node::Reg(f, r) => {
                if !pts[i].is_empty() {
                    sol.regs.insert((f.clone(), r.clone()), pts[i].clone());
                }
            }
            Node::Content(o) => {
                if !pts[i].is_empty() {
                    sol.contents.insert(o.clone(), pts[i].clone());
                }
            }
            _ => {}
        }
    }
    for f in &m.functions {
        for i in f.insts() {
            let (kind, ptr, ty) = match &i.kind {
                InstKind::Load { ty, ptr } => (AccessKind::Read, ptr, ty),
                InstKind::Store { ty, ptr, .. } => (AccessKind::Write, ptr, ty),
                _ => continue,
            };
            let portions = site_portions(&sol, &f.name, ptr, ty.size());
            sol.accesses.insert(i.id, AccessSite { func: f.name.clone(), kind, ptr: ptr.clone(), ty: ty.clone(), portions });
        }
    }
    sol
}

pub(crate) fn site_portions(sol: &PointsToSolution, func: &str, ptr: &Operand, size: u64) -> Vec<Portion> {
    let mut ps: BTreeSet<Portion> = BTreeSet::new();
    for l in sol.pts_operand(func, ptr) {
        if let Obj::Site(site) = &l.obj {
            let obj_size = sol.objects[site].size;
            ps.insert(portion_of(site, l.off, size, obj_size));
        }
    }
    ps.into_iter().collect()
}

pub fn andersen_solve(m: &Module) -> PointsToSolution {
    let s = build(m);
    let pts = solve_worklist(&s);
    assemble(m, &s, pts)
}

pub fn naive_solve(m: &Module) -> PointsToSolution {
    let s = build(m);
    let pts = solve_naive(&s);
    assemble(m, &s, pts)
}

/// Candidate callees of every indirect call: functions whose address flows
/// to the callee operand and whose prototype matches.
pub fn resolve_indirect_targets(m: &Module, sol: &PointsToSolution) -> TargetMap {
    let mut out = TargetMap::new();
    for f in &m.functions {
        let types = f.reg_types(m);
        for i in f.insts() {
            let InstKind::ICall { ret, callee, args } = &i.kind else { continue };
            let arg_types: Vec<Option<Type>> = args
                .iter()
                .map(|a| match a {
                    Operand::Reg(r) => types.get(r).cloned(),
                    Operand::Global(_) => Some(Type::Addr),
                    Operand::Const(_) => None,
                })
                .collect();
            let mut set = BTreeSet::new();
            for l in sol.pts_operand(&f.name, callee) {
                let Obj::Func(g) = &l.obj else { continue };
                let Some(gf) = m.function(g) else { continue };
                let sig = (gf.params.iter().map(|p| p.ty.clone()).collect(), gf.ret.clone());
                if compatible(&sig, &arg_types, ret) {
                    set.insert(g.clone());
                }
            }
            out.insert(i.id, set);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ir::parse_module;

    fn site(f: &str, r: &str) -> SiteId {
        SiteId::Stack { func: f.into(), reg: r.into() }
    }

    #[test]
    fn gep_into_alloca_is_an_exact_portion() {
        let m = parse_module("func @main() -> i64 {\ne:\n  %p = alloca [4 x i64]\n  %q = gep [4 x i64] %p, 0, 2\n  store i64 1, %q\n  ret 0\n}").unwrap();
        let s = andersen_solve(&m);
        let id = m.functions[0].blocks[0].insts[2].id;
        assert_eq!(s.portions(id), &[Portion { site: site("main", "p"), offset: 16, len: 8, stride: 8 }]);
    }

    #[test]
    fn phi_merges_two_allocas() {
        let m = parse_module("func @main(%c: i1) -> i64 {\ne:\n  %a = alloca i64\n  %b = alloca i64\n  condbr %c, x, y\nx:\n  br j\ny:\n  br j\nj:\n  %p = phi addr [x: %a, y: %b]\n  %v = load i64, %p\n  ret %v\n}").unwrap();
        let s = andersen_solve(&m);
        let id = m.functions[0].blocks[3].insts[1].id;
        assert_eq!(s.portions(id).len(), 2);
    }

    #[test]
    fn pointers_through_memory_and_calls() {
        let src = "global @cell : addr\nglobal @tab : [4 x i32]\nfunc @get(%p: addr) -> i32 {\ne:\n  %v = load i32, %p\n  ret %v\n}\nfunc @main() -> i64 {\ne:\n  store addr @tab, @cell\n  %p = load addr, @cell\n  %q = gep [4 x i32] %p, 0, 1\n  %v = call @get(%q)\n  ret 0\n}";
        let m = parse_module(src).unwrap();
        let s = andersen_solve(&m);
        let id = m.functions[0].blocks[0].insts[0].id;
        assert_eq!(s.portions(id), &[Portion { site: SiteId::Global("tab".into()), offset: 4, len: 4, stride: 4 }]);
    }

    #[test]
    fn indirect_targets_filter_prototypes() {
        let src = "global @tab : [3 x addr]\nfunc @f(%x: i64) -> i64 {\ne:\n  ret %x\n}\nfunc @g(%x: i64) -> i64 {\ne:\n  ret 1\n}\nfunc @h(%x: i64, %y: i64) -> i64 {\ne:\n  ret 2\n}\nfunc @main(%i: i64) -> i64 {\ne:\n  %p0 = gep [3 x addr] @tab, 0, 0\n  store addr @f, %p0\n  %p1 = gep [3 x addr] @tab, 0, 1\n  store addr @g, %p1\n  %p2 = gep [3 x addr] @tab, 0, 2\n  store addr @h, %p2\n  %pi = gep [3 x addr] @tab, 0, %i\n  %fp = load addr, %pi\n  %r = icall i64 %fp(%i)\n  ret %r\n}";
        let m = parse_module(src).unwrap();
        let t = resolve_indirect_targets(&m, &andersen_solve(&m));
        assert_eq!(t.values().next().unwrap(), &BTreeSet::from(["f".to_string(), "g".to_string()]));
    }

    #[test]
    fn indirect_call_flows_arguments() {
        let src = "global @a : [2 x i64]\nfunc @f(%p: addr) -> i64 {\ne:\n  %v = load i64, %p\n  ret %v\n}\nfunc @main() -> i64 {\ne:\n  %fp = select 1, @f, @f\n  %r = icall i64 %fp(@a)\n  ret %r\n}";
        let m = parse_module(src).unwrap();
        let s = andersen_solve(&m);
        let id = m.functions[0].blocks[0].insts[0].id;
        assert_eq!(s.portions(id).len(), 1);
        assert_eq!(s, naive_solve(&m));
    }
}
