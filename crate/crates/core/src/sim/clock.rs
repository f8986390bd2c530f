use crate::protocol::ProcessId;
use crate::time::Time;

/// Offset clocks: `clock_p(τ) = τ + offset_p`, offsets non-negative and within
/// ε of each other.
#[derive(Clone, Debug)]
pub struct Clocks {
    offsets: Vec<i64>,
    last_read: Vec<Option<i64>>,
}

impl Clocks {
    pub fn new(offsets: Vec<i64>) -> Clocks {
        let n = offsets.len();
        Clocks {
            offsets,
            last_read: vec![None; n],
        }
    }

    pub fn offsets(&self) -> &[i64] {
        &self.offsets
    }

    /// Clock value of `p` at real time `real`.
    pub fn value(&self, p: ProcessId, real: i64) -> Time {
        Time::new(real + self.offsets[p.0])
    }

    /// A reading by `p` requested at real time `real`. A reading requested no
    /// later than the previous one is deferred to the next tick, so successive
    /// readings strictly increase. Returns the value and the real time at which
    /// it was taken.
    pub fn read(&mut self, p: ProcessId, real: i64) -> (Time, i64) {
        let at = match self.last_read[p.0] {
            Some(last) if real <= last => last + 1,
            _ => real,
        };
        self.last_read[p.0] = Some(at);
        (self.value(p, at), at)
    }

    /// Earliest real time at which some clock shows at least `t`.
    pub fn earliest_real(&self, t: Time) -> i64 {
        let max = self.offsets.iter().copied().max().unwrap_or(0);
        (t.finite() - max).max(0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn synchronized_clocks_agree() {
        let c = Clocks::new(vec![0, 0, 0]);
        for real in [0, 7, 1000] {
            assert_eq!(c.value(ProcessId(0), real), c.value(ProcessId(2), real));
        }
    }

    #[test]
    fn opposite_offsets_differ_by_epsilon() {
        let eps = 4;
        // (+ε/2, −ε/2) normalized to (ε, 0).
        let c = Clocks::new(vec![eps, 0]);
        let d = c.value(ProcessId(0), 50).finite() - c.value(ProcessId(1), 50).finite();
        assert_eq!(d, eps);
    }

    #[test]
    fn immediate_rereads_strictly_increase() {
        let mut c = Clocks::new(vec![3]);
        let (a, ra) = c.read(ProcessId(0), 10);
        let (b, rb) = c.read(ProcessId(0), 10);
        assert!(b > a);
        assert_eq!((ra, rb), (10, 11));
    }
}
