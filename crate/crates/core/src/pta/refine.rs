//! Narrowing whole-object points-to results by layout matching.
//!
//! When an access goes through a `gep T %q, 0, ...` and `%q` may point
//! anywhere in an object, only the places where the object's (nested)
//! layout holds a `T` can host the access; the portion set becomes those
//! places shifted by the field path. Without a gep the accessed scalar type
//! itself is matched.

use std::collections::BTreeSet;

use super::*;
use crate::ir::edit::def_sites;
use crate::ir::{InstKind, Module};

pub const MAX_DEPTH: usize = 8;
/// Arrays longer than this are not enumerated element by element.
const MAX_ENUM: u64 = 64;

/// Start offsets of every sub-object of type `target` within `ty`.
/// `None` when the layout is too deep or too large to enumerate.
pub fn placements(ty: &Type, target: &Type, depth: usize) -> Option<Vec<Off>> {
    if ty == target {
        return Some(vec![Off::Exact(0)]);
    }
    if depth == 0 {
        return if ty.is_scalar() { Some(vec![]) } else { None };
    }
    match ty {
        Type::Struct(fields) => {
            let mut out = Vec::new();
            let mut base = 0;
            for f in fields {
                for p in placements(&f.ty, target, depth - 1)? {
                    out.push(shift(p, base));
                }
                base += f.ty.size();
            }
            Some(out)
        }
        Type::Array(elem, n) => {
            let inner = placements(elem, target, depth - 1)?;
            let es = elem.size();
            let mut out = Vec::new();
            for p in inner {
                match p {
                    Off::Exact(a) if *n > 1 => out.push(Off::Strided { start: a, stride: es, count: *n }),
                    Off::Exact(a) => out.push(Off::Exact(a)),
                    Off::Strided { .. } if *n <= MAX_ENUM => {
                        for k in 0..*n {
                            out.push(shift(p, k * es));
                        }
                    }
                    _ => return None,
                }
            }
            Some(out)
        }
        _ => Some(vec![]),
    }
}

fn shift(o: Off, by: u64) -> Off {
    match o {
        Off::Exact(a) => Off::Exact(a + by),
        Off::Strided { start, stride, count } => Off::Strided { start: start + by, stride, count },
        Off::Any => Off::Any,
    }
}

/// Combines a placement with the offset of the field path inside it.
fn combine(place: Off, intra: Off) -> Option<Off> {
    match (place, intra) {
        (Off::Exact(a), Off::Exact(d)) => Some(Off::Exact(a + d)),
        (Off::Exact(a), Off::Strided { start, stride, count }) => Some(Off::Strided { start: a + start, stride, count }),
        (Off::Strided { start, stride, count }, Off::Exact(d)) => Some(Off::Strided { start: start + d, stride, count }),
        _ => None,
    }
}

/// Refined portions of `site` for one access, or `None` to keep the whole
/// object.
fn refine_one(obj: &AbstractObject, target: &Type, intra: Off, size: u64) -> Option<Vec<Portion>> {
    let places = placements(&obj.ty, target, MAX_DEPTH)?;
    if places.is_empty() {
        return None;
    }
    let mut out = Vec::new();
    for p in places {
        let off = combine(p, intra)?;
        out.push(portion_of(&obj.site, off, size, obj.size));
    }
    Some(out)
}

pub fn refine_field_sensitivity(s: &PointsToSolution, m: &Module) -> PointsToSolution {
    let mut out = s.clone();
    for f in &m.functions {
        let defs = def_sites(f);
        for i in f.insts() {
            let Some(site) = s.accesses.get(&i.id) else { continue };
            if !s.pts_operand(&f.name, &site.ptr).iter().any(|l| l.off == Off::Any && matches!(l.obj, Obj::Site(_))) {
                continue;
            }
            let size = site.ty.size();
            // The gep producing the pointer, if any, and its field path.
            let mut shape: Option<(Type, Off, Operand)> = None;
            if let Operand::Reg(r) = &site.ptr {
                if let Some(&(bi, ii)) = defs.get(r) {
                    if ii != usize::MAX {
                        if let InstKind::Gep { ty, base, indices } = &f.blocks[bi].insts[ii].kind {
                            if indices.first() == Some(&Operand::Const(0)) {
                                if let Some(g) = GepShape::of(ty, indices) {
                                    let intra = g.apply(Off::Exact(0), Some(ty.size()));
                                    if intra != Off::Any {
                                        shape = Some((ty.clone(), intra, base.clone()));
                                    }
                                }
                            }
                        }
                    }
                }
            }
            let (target, intra, base) = match shape {
                Some((t, intra, base)) => (t, intra, Some(base)),
                None => (site.ty.clone(), Off::Exact(0), None),
            };
            let mut portions: BTreeSet<Portion> = BTreeSet::new();
            let whole: Vec<Loc> = match &base {
                Some(b) => s.pts_operand(&f.name, b).into_iter().collect(),
                None => s.pts_operand(&f.name, &site.ptr).into_iter().collect(),
            };
            for l in &s.pts_operand(&f.name, &site.ptr) {
                let Obj::Site(sid) = &l.obj else { continue };
                let obj = &s.objects[sid];
                let from_any = l.off == Off::Any && whole.iter().any(|w| w.obj == l.obj && w.off == Off::Any);
                match from_any.then(|| refine_one(obj, &target, intra, size)).flatten() {
                    Some(ps) => portions.extend(ps),
                    None => {
                        portions.insert(portion_of(sid, l.off, size, obj.size));
                    }
                }
            }
            out.accesses.get_mut(&i.id).unwrap().portions = portions.into_iter().collect();
        }
    }
    out
}
