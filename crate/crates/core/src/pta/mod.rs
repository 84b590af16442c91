//! Points-to analysis: inclusion-based solving with field offsets,
//! layout-driven refinement of whole-object results, context cloning, and
//! indirect-call target resolution.

pub mod andersen;
pub mod callgraph;
pub mod clone;
pub mod refine;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write;

use serde::{Deserialize, Serialize};

pub use andersen::{andersen_solve, naive_solve, resolve_indirect_targets};
pub use callgraph::CallGraph;
pub use clone::{aggressive_clone, CloneError, CloneInfo, CloneMap};
pub use refine::refine_field_sensitivity;

use crate::dfl::SiteId;
use crate::interp::AccessKind;
use crate::ir::{InstId, Operand, Type};

/// Possible callees of each indirect call.
pub type TargetMap = BTreeMap<InstId, BTreeSet<String>>;

/// An abstract memory object, or a function whose address is taken.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Obj {
    Site(SiteId),
    Func(String),
}

/// Offsets a pointer may hold within its object.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Off {
    Exact(u64),
    /// `start + stride * i` for `i < count`.
    Strided { start: u64, stride: u64, count: u64 },
    /// Anywhere in the object.
    Any,
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Loc {
    pub obj: Obj,
    pub off: Off,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AbstractObject {
    pub site: SiteId,
    pub ty: Type,
    pub size: u64,
}

/// A byte range of an object that an access may touch.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Portion {
    pub site: SiteId,
    pub offset: u64,
    pub len: u64,
    pub stride: u64,
}

impl Portion {
    pub fn contains(&self, offset: u64, size: u64) -> bool {
        offset >= self.offset && offset + size <= self.offset + self.len
    }

    pub fn bytes(&self) -> BTreeSet<(SiteId, u64)> {
        (self.offset..self.offset + self.len).map(|b| (self.site.clone(), b)).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AccessSite {
    pub func: String,
    pub kind: AccessKind,
    pub ptr: Operand,
    pub ty: Type,
    /// Sorted by (site, offset).
    pub portions: Vec<Portion>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct PointsToSolution {
    /// Keyed by (function, register).
    pub regs: BTreeMap<(String, String), BTreeSet<Loc>>,
    /// Field-insensitive contents of each object.
    pub contents: BTreeMap<Obj, BTreeSet<Loc>>,
    pub objects: BTreeMap<SiteId, AbstractObject>,
    pub accesses: BTreeMap<InstId, AccessSite>,
}

impl PointsToSolution {
    pub fn pts(&self, func: &str, reg: &str) -> BTreeSet<Loc> {
        self.regs.get(&(func.to_string(), reg.to_string())).cloned().unwrap_or_default()
    }

    /// Locations an operand may point to.
    pub fn pts_operand(&self, func: &str, o: &Operand) -> BTreeSet<Loc> {
        match o {
            Operand::Reg(r) => self.pts(func, r),
            Operand::Global(g) => BTreeSet::from([global_loc(g, &self.objects)]),
            Operand::Const(_) => BTreeSet::new(),
        }
    }

    pub fn portions(&self, inst: InstId) -> &[Portion] {
        self.accesses.get(&inst).map(|a| a.portions.as_slice()).unwrap_or(&[])
    }

    /// Mean number of distinct objects per access over `insts`.
    pub fn mean_objects(&self, insts: &BTreeSet<InstId>) -> f64 {
        mean(insts, |i| self.portions(i).iter().map(|p| &p.site).collect::<BTreeSet<_>>().len())
    }

    /// Mean number of portions per access over `insts`.
    pub fn mean_portions(&self, insts: &BTreeSet<InstId>) -> f64 {
        mean(insts, |i| self.portions(i).len())
    }

    /// Portion lists per access site as text, one site per line.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        for (id, a) in &self.accesses {
            let ps: Vec<String> = a.portions.iter().map(|p| format!("{} +{} len {} stride {}", p.site, p.offset, p.len, p.stride)).collect();
            let kind = match a.kind {
                AccessKind::Read => "read",
                AccessKind::Write => "write",
            };
            let _ = writeln!(out, "{id} @{} {kind}: [{}]", a.func, ps.join(", "));
        }
        out
    }
}

fn mean(insts: &BTreeSet<InstId>, f: impl Fn(InstId) -> usize) -> f64 {
    if insts.is_empty() {
        return 0.0;
    }
    insts.iter().map(|&i| f(i) as f64).sum::<f64>() / insts.len() as f64
}

pub(crate) fn global_loc(name: &str, objects: &BTreeMap<SiteId, AbstractObject>) -> Loc {
    let site = SiteId::Global(name.to_string());
    if objects.contains_key(&site) {
        Loc { obj: Obj::Site(site), off: Off::Exact(0) }
    } else {
        Loc { obj: Obj::Func(name.to_string()), off: Off::Exact(0) }
    }
}

/// The address arithmetic of one `gep`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GepShape {
    pub offset: u64,
    /// (scale, element count) of each variable index; the leading index has
    /// no count.
    pub vars: Vec<(u64, Option<u64>)>,
    /// Element type addressed by the result.
    pub result: Type,
}

impl GepShape {
    pub fn of(ty: &Type, indices: &[Operand]) -> Option<GepShape> {
        let mut shape = GepShape { offset: 0, vars: Vec::new(), result: ty.clone() };
        let (first, rest) = indices.split_first()?;
        match first {
            Operand::Const(c) => shape.offset = c.wrapping_mul(ty.size()),
            _ => shape.vars.push((ty.size(), None)),
        }
        let mut cur = ty.clone();
        for idx in rest {
            match cur {
                Type::Array(elem, n) => {
                    match idx {
                        Operand::Const(c) => shape.offset = shape.offset.wrapping_add(c.wrapping_mul(elem.size())),
                        _ => shape.vars.push((elem.size(), Some(n))),
                    }
                    cur = *elem;
                }
                Type::Struct(ref fields) => {
                    let Operand::Const(k) = idx else { return None };
                    shape.offset = shape.offset.wrapping_add(cur.field_offset(*k as usize)?);
                    cur = fields[*k as usize].ty.clone();
                }
                _ => return None,
            }
        }
        shape.result = cur;
        Some(shape)
    }

    /// Applies the arithmetic to an incoming offset, inside an object of
    /// `size` bytes (`None` for function objects).
    pub fn apply(&self, off: Off, size: Option<u64>) -> Off {
        let mut cur = match off {
            Off::Exact(a) => Off::Exact(a.wrapping_add(self.offset)),
            Off::Strided { start, stride, count } => Off::Strided { start: start.wrapping_add(self.offset), stride, count },
            Off::Any => return Off::Any,
        };
        for &(scale, count) in &self.vars {
            let Some(n) = count else { return Off::Any };
            cur = match cur {
                Off::Exact(a) => Off::Strided { start: a, stride: scale, count: n },
                // Contiguous nesting: an outer dimension of inner rows.
                Off::Strided { start, stride, count } if scale * n == stride => Off::Strided { start, stride: scale, count: count * n },
                Off::Strided { start, stride, count } if stride * count == scale => Off::Strided { start, stride, count: count * n },
                _ => return Off::Any,
            };
        }
        if let Some(size) = size {
            let end = match cur {
                Off::Exact(a) => a.checked_add(self.result.size().max(1)),
                Off::Strided { start, stride, count } => start.checked_add(stride * (count - 1) + self.result.size().max(1)),
                Off::Any => Some(0),
            };
            if end.is_none_or(|e| e > size) {
                return Off::Any;
            }
        }
        cur
    }
}

/// The portion `off` covers for an access of `size` bytes.
pub fn portion_of(site: &SiteId, off: Off, size: u64, obj_size: u64) -> Portion {
    let (offset, len, stride) = match off {
        Off::Exact(a) => (a, size, size),
        Off::Strided { start, stride, count } => (start, stride * count.saturating_sub(1) + size, stride),
        Off::Any => (0, obj_size, size),
    };
    Portion { site: site.clone(), offset, len, stride }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn arr(n: u64) -> Type {
        Type::Array(Box::new(Type::I64), n)
    }

    #[test]
    fn constant_gep_is_exact() {
        let s = GepShape::of(&arr(4), &[Operand::Const(0), Operand::Const(2)]).unwrap();
        assert_eq!(s.apply(Off::Exact(0), Some(32)), Off::Exact(16));
    }

    #[test]
    fn variable_index_strides_the_array() {
        let s = GepShape::of(&arr(4), &[Operand::Const(0), Operand::reg("i")]).unwrap();
        assert_eq!(s.apply(Off::Exact(0), Some(32)), Off::Strided { start: 0, stride: 8, count: 4 });
        let p = portion_of(&SiteId::Global("a".into()), s.apply(Off::Exact(0), Some(32)), 8, 32);
        assert_eq!((p.offset, p.len), (0, 32));
    }

    #[test]
    fn leading_variable_index_loses_precision() {
        let s = GepShape::of(&Type::I64, &[Operand::reg("i")]).unwrap();
        assert_eq!(s.apply(Off::Exact(0), Some(64)), Off::Any);
    }

    #[test]
    fn two_dimensional_rows_merge() {
        let t = Type::Array(Box::new(Type::Array(Box::new(Type::I32), 4)), 4);
        let s = GepShape::of(&t, &[Operand::Const(0), Operand::reg("i"), Operand::reg("j")]).unwrap();
        assert_eq!(s.apply(Off::Exact(0), Some(64)), Off::Strided { start: 0, stride: 4, count: 16 });
    }
}
