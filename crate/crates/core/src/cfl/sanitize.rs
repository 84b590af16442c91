//! Operand sanitization for division: the hardware divider's latency
//! depends on its operands, so sensitive `div`/`rem` call fixed-latency
//! restoring-division routines instead, with the zero divisor mapped to one
//! and the original fault kept behind a predicated trap.

use crate::ir::{parse_module, Function, IdGen, Module};

pub const UDIV: &str = "ct.udiv.i64";
pub const UREM: &str = "ct.urem.i64";

fn routine(name: &str, result: &str) -> String {
    format!(
        "func @{name}(%a: i64, %d0: i64) -> i64 {{
e:
  %z = icmp eq %d0, 0
  %d = select %z, 1, %d0
  br l
l:
  %i = phi i64 [e: 0, l: %i1]
  %q = phi i64 [e: 0, l: %q1]
  %r = phi i64 [e: 0, l: %r3]
  %sh = sub i64 63, %i
  %a1 = lshr i64 %a, %sh
  %bit = and i64 %a1, 1
  %top = lshr i64 %r, 63
  %r0 = shl i64 %r, 1
  %r1 = or i64 %r0, %bit
  %big = icmp ge %r1, %d
  %ovf = icmp ne %top, 0
  %ge = or i1 %big, %ovf
  %rs = sub i64 %r1, %d
  %r3 = select %ge, %rs, %r1
  %g = select %ge, 1, 0
  %q0 = shl i64 %q, 1
  %q1 = or i64 %q0, %g
  %i1 = add i64 %i, 1
  %c = icmp lt %i1, 64
  condbr %c, l, x
x:
  ret %{result}
}}"
    )
}

/// The quotient and remainder routines as IR functions.
pub fn division_routines() -> Vec<Function> {
    let src = format!("entry @{UDIV}\n{}\n{}", routine(UDIV, "q1"), routine(UREM, "r3"));
    parse_module(&src).expect("division routines parse").functions
}

/// Appends the routines unless the module already has them.
pub fn ensure_division_routines(m: &mut Module) {
    for mut f in division_routines() {
        if m.function(&f.name).is_none() {
            let mut ids = IdGen::for_module(m);
            for b in &mut f.blocks {
                for i in &mut b.insts {
                    i.id = ids.next();
                }
                b.term.id = ids.next();
            }
            m.functions.push(f);
        }
    }
}
