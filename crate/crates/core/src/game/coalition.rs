use std::fmt;

use super::GameError;

const WORDS: usize = 16;

/// Largest player count a [`Coalition`] can hold.
pub const MAX_PLAYERS: usize = WORDS * 64;

/// A subset of the players `0..n`, stored as a fixed-capacity bitset.
///
/// No bit at or above `n` is ever set.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Coalition {
    bits: [u64; WORDS],
    n: u16,
}

impl Coalition {
    pub fn empty(n: usize) -> Result<Self, GameError> {
        if n == 0 || n > MAX_PLAYERS {
            return Err(GameError::PlayerCount { n, max: MAX_PLAYERS });
        }
        Ok(Self { bits: [0; WORDS], n: n as u16 })
    }

    pub fn full(n: usize) -> Result<Self, GameError> {
        let mut c = Self::empty(n)?;
        for w in 0..n / 64 {
            c.bits[w] = u64::MAX;
        }
        if !n.is_multiple_of(64) {
            c.bits[n / 64] = (1u64 << (n % 64)) - 1;
        }
        Ok(c)
    }

    pub fn from_players<I: IntoIterator<Item = usize>>(n: usize, players: I) -> Result<Self, GameError> {
        let mut c = Self::empty(n)?;
        for p in players {
            c.try_insert(p)?;
        }
        Ok(c)
    }

    /// Builds a coalition from the low bits of `mask`; requires `n <= 64`.
    pub fn from_mask(n: usize, mask: u64) -> Result<Self, GameError> {
        let mut c = Self::empty(n)?;
        if n < 64 && mask >> n != 0 {
            return Err(GameError::PlayerOutOfRange { player: 63 - mask.leading_zeros() as usize, n });
        }
        if n > 64 {
            return Err(GameError::Precondition(format!("from_mask needs n <= 64, got {n}")));
        }
        c.bits[0] = mask;
        Ok(c)
    }

    pub fn num_players(&self) -> usize {
        self.n as usize
    }

    pub fn contains(&self, player: usize) -> bool {
        player < self.num_players() && self.bits[player / 64] >> (player % 64) & 1 == 1
    }

    pub fn try_insert(&mut self, player: usize) -> Result<(), GameError> {
        self.check(player)?;
        self.bits[player / 64] |= 1 << (player % 64);
        Ok(())
    }

    pub fn try_remove(&mut self, player: usize) -> Result<(), GameError> {
        self.check(player)?;
        self.bits[player / 64] &= !(1 << (player % 64));
        Ok(())
    }

    /// Copy with `player` added. Panics if `player >= n`.
    pub fn with(mut self, player: usize) -> Self {
        assert!(player < self.num_players(), "player {player} out of range");
        self.bits[player / 64] |= 1 << (player % 64);
        self
    }

    /// Copy with `player` removed. Panics if `player >= n`.
    pub fn without(mut self, player: usize) -> Self {
        assert!(player < self.num_players(), "player {player} out of range");
        self.bits[player / 64] &= !(1 << (player % 64));
        self
    }

    pub fn cardinality(&self) -> usize {
        self.bits.iter().map(|w| w.count_ones() as usize).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.iter().all(|&w| w == 0)
    }

    pub fn union(&self, other: &Self) -> Self {
        let mut out = *self;
        for (a, b) in out.bits.iter_mut().zip(other.bits.iter()) {
            *a |= *b;
        }
        out
    }

    pub fn intersection(&self, other: &Self) -> Self {
        let mut out = *self;
        for (a, b) in out.bits.iter_mut().zip(other.bits.iter()) {
            *a &= *b;
        }
        out
    }

    pub fn complement(&self) -> Self {
        let full = Self { bits: [0; WORDS], n: self.n }.fill();
        let mut out = *self;
        for (a, b) in out.bits.iter_mut().zip(full.bits.iter()) {
            *a = !*a & *b;
        }
        out
    }

    pub fn is_subset(&self, other: &Self) -> bool {
        self.bits.iter().zip(other.bits.iter()).all(|(a, b)| a & !b == 0)
    }

    /// The low 64 bits, useful as a table index for small games.
    pub fn low_word(&self) -> u64 {
        self.bits[0]
    }

    pub fn iter(&self) -> impl Iterator<Item = usize> + '_ {
        self.bits.iter().enumerate().flat_map(|(w, &word)| {
            let mut rest = word;
            std::iter::from_fn(move || {
                if rest == 0 {
                    return None;
                }
                let b = rest.trailing_zeros() as usize;
                rest &= rest - 1;
                Some(w * 64 + b)
            })
        })
    }

    fn fill(mut self) -> Self {
        let n = self.num_players();
        for w in 0..n / 64 {
            self.bits[w] = u64::MAX;
        }
        if !n.is_multiple_of(64) {
            self.bits[n / 64] = (1u64 << (n % 64)) - 1;
        }
        self
    }

    fn check(&self, player: usize) -> Result<(), GameError> {
        if player >= self.num_players() {
            Err(GameError::PlayerOutOfRange { player, n: self.num_players() })
        } else {
            Ok(())
        }
    }
}

impl fmt::Debug for Coalition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Coalition(n={}, ", self.n)?;
        f.debug_set().entries(self.iter()).finish()?;
        write!(f, ")")
    }
}

impl fmt::Display for Coalition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{{")?;
        for (k, p) in self.iter().enumerate() {
            if k > 0 {
                write!(f, ",")?;
            }
            write!(f, "{p}")?;
        }
        write!(f, "}}")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn full_and_empty() {
        let full = Coalition::full(130).unwrap();
        assert_eq!(full.cardinality(), 130);
        assert!(full.contains(129));
        assert!(!full.contains(130));
        assert_eq!(full.complement().cardinality(), 0);
        assert!(Coalition::empty(0).is_err());
        assert!(Coalition::empty(MAX_PLAYERS + 1).is_err());
    }

    #[test]
    fn insert_out_of_range_is_rejected() {
        let mut c = Coalition::empty(4).unwrap();
        assert!(c.try_insert(4).is_err());
        assert!(Coalition::from_mask(3, 0b1000).is_err());
    }

    #[test]
    fn display_lists_members() {
        let c = Coalition::from_players(200, [0, 65, 199]).unwrap();
        assert_eq!(c.to_string(), "{0,65,199}");
    }

    proptest! {
        #[test]
        fn cardinality_matches_members(n in 1usize..300, raw in proptest::collection::vec(0usize..300, 0..40)) {
            let players: Vec<usize> = raw.into_iter().filter(|&p| p < n).collect();
            let c = Coalition::from_players(n, players.iter().copied()).unwrap();
            let mut uniq = players.clone();
            uniq.sort_unstable();
            uniq.dedup();
            prop_assert_eq!(c.cardinality(), uniq.len());
            prop_assert_eq!(c.iter().collect::<Vec<_>>(), uniq);
            prop_assert!(c.iter().all(|p| p < n));
            prop_assert_eq!(c.complement().cardinality(), n - c.cardinality());
            prop_assert!(c.is_subset(&c.union(&c.complement())));
        }
    }
}
