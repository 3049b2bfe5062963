//! Single-frontier taint tracking for SDC attribution.
//!
//! Taint starts at injected destinations and flows through every
//! instruction that reads a tainted register, predicate, guard or memory
//! byte. A clean overwrite clears it. Two cases cannot be tracked
//! precisely and fall back to over-approximation: a store through a tainted
//! base or under a tainted guard that skipped it (some golden location
//! keeps a stale value, so all memory is considered tainted) and a
//! control-flow change (every later write is tainted).

use bitstorm_isa::{Dest, Effect, Hook, Instruction, MemWidth, Opcode, Operand, Program, Space, Word32, PT, RZ};

use crate::inject::InjectHook;

#[derive(Clone, Debug)]
pub struct TaintState {
    regs: [bool; 256],
    preds: u8,
    global: Vec<u64>,
    shared: Vec<u64>,
    /// Every memory byte counts as tainted.
    pub memory_wide: bool,
    /// Control flow may differ from golden.
    pub control: bool,
    /// A tainted value was the base of a completed load or store.
    pub ever_tainted_address: bool,
}

fn bitset(bytes: usize) -> Vec<u64> {
    vec![0; bytes.div_ceil(64)]
}

impl TaintState {
    pub fn new(program: &Program) -> Self {
        TaintState {
            regs: [false; 256],
            preds: 0,
            global: bitset(program.layout.global_size as usize),
            shared: bitset(program.layout.shared_size as usize),
            memory_wide: false,
            control: false,
            ever_tainted_address: false,
        }
    }

    pub fn reg(&self, r: u8) -> bool {
        r != RZ && self.regs[r as usize]
    }

    pub fn pred(&self, p: u8) -> bool {
        p < PT && self.preds >> p & 1 == 1
    }

    pub fn tainted_regs(&self) -> Vec<u8> {
        (0..=254u8).filter(|&r| self.regs[r as usize]).collect()
    }

    pub fn mem(&self, space: Space, addr: u32) -> bool {
        if self.memory_wide {
            return true;
        }
        let set = match space {
            Space::Global => &self.global,
            Space::Shared => &self.shared,
            Space::Const => return false,
        };
        let a = addr as usize;
        set.get(a / 64).is_some_and(|w| w >> (a % 64) & 1 == 1)
    }

    fn mem_range(&self, space: Space, addr: u32, width: MemWidth) -> bool {
        (0..width.bytes()).any(|k| self.mem(space, addr + k))
    }

    fn set_mem(&mut self, space: Space, addr: u32, width: MemWidth, t: bool) {
        let set = match space {
            Space::Global => &mut self.global,
            Space::Shared => &mut self.shared,
            Space::Const => return,
        };
        for k in 0..width.bytes() {
            let a = (addr + k) as usize;
            if let Some(w) = set.get_mut(a / 64) {
                if t {
                    *w |= 1 << (a % 64);
                } else {
                    *w &= !(1 << (a % 64));
                }
            }
        }
    }

    fn set_dest(&mut self, d: Dest, t: bool) {
        match d {
            Dest::Reg(r) if r != RZ => self.regs[r as usize] = t,
            Dest::Pred(p) if p < PT => {
                if t {
                    self.preds |= 1 << p;
                } else {
                    self.preds &= !(1 << p);
                }
            }
            _ => {}
        }
    }

    fn operand(&self, op: Operand) -> bool {
        match op {
            Operand::Reg(r) => self.reg(r),
            Operand::Pred(p) => self.pred(p),
            _ => false,
        }
    }

    fn guard(&self, i: &Instruction) -> bool {
        i.guard.is_some_and(|g| self.pred(g.pred))
    }
}

fn is_control(op: Opcode) -> bool {
    matches!(op, Opcode::Bra | Opcode::Exit)
}

/// Wraps the injection hook and tracks taint alongside it.
pub struct TaintHook<'f, 'p> {
    pub inject: InjectHook<'f>,
    pub state: TaintState,
    code: &'p [Instruction],
}

impl<'f, 'p> TaintHook<'f, 'p> {
    pub fn new(program: &'p Program, inject: InjectHook<'f>) -> Self {
        TaintHook { inject, state: TaintState::new(program), code: program.decoded() }
    }
}

impl Hook for TaintHook<'_, '_> {
    fn before(&mut self, dyn_index: u64, pc: u32, word: Word32) -> Option<Word32> {
        self.inject.before(dyn_index, pc, word)
    }

    fn after(&mut self, e: &Effect<'_>) -> Option<u32> {
        let replaced = self.inject.after(e);
        let st = &mut self.state;
        let i = e.inst;
        let golden = &self.code[e.pc as usize];
        let encoded = self.inject.encoding_hit;
        if encoded {
            // the golden instruction's effect is lost, the corrupted one's is new
            st.set_dest(golden.dest, true);
            if golden.opcode.is_store() || i.opcode.is_store() {
                st.memory_wide = true;
            }
            if is_control(golden.opcode) || is_control(i.opcode) {
                st.control = true;
            }
        }
        let guard = st.guard(i) || st.control;
        if i.opcode == Opcode::Bra && st.guard(i) {
            st.control = true;
        }
        if e.skipped {
            if guard {
                st.set_dest(i.dest, true);
                // the golden run may have stored here; the address is unknown
                if i.opcode.is_store() {
                    st.memory_wide = true;
                }
            }
            return replaced;
        }
        let mut t = guard || encoded || i.srcs.iter().any(|&s| st.operand(s));
        if let Some(m) = e.mem {
            let base = st.operand(i.srcs[0]);
            if base {
                st.ever_tainted_address = true;
            }
            if m.store {
                let v = t || st.operand(i.srcs[1]);
                if base {
                    st.memory_wide = true;
                }
                st.set_mem(m.space, m.addr, m.width, v);
            } else {
                t |= st.mem_range(m.space, m.addr, m.width);
            }
        }
        if let Some(w) = e.write {
            st.set_dest(w.dest, t || self.inject.value_hit);
        }
        replaced
    }
}
