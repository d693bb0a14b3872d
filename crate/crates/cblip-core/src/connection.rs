//! Connection typing: classify how two triples share endpoints and assemble
//! the per-sequence connection matrix that biases attention.
//!
//! Seven categories cover every ordered pair. When several predicates hold
//! at once (possible with self-loops or repeated entities) the conjunctive
//! categories win, in the fixed priority 5 > 6 > 1 > 2 > 3 > 4 > 7:
//!
//! 1. heads match
//! 2. tails match
//! 3. first's tail is second's head
//! 4. first's head is second's tail
//! 5. heads match AND tails match (parallel edges)
//! 6. head/tail cross-match both ways (inverse edges)
//! 7. no shared endpoint

use std::fmt;

use crate::kg::Triple;

/// One of the seven endpoint-sharing categories; `code()` is in [1, 7].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum ConnectionType {
    HeadHead = 1,
    TailTail = 2,
    TailHead = 3,
    HeadTail = 4,
    Parallel = 5,
    Inverse = 6,
    Disjoint = 7,
}

/// Number of connection categories; bias tables carry one row per category.
pub const NUM_CONNECTION_TYPES: usize = 7;

impl ConnectionType {
    pub fn code(self) -> u8 {
        self as u8
    }

    /// Zero-based index for bias-table lookup.
    pub fn index(self) -> usize {
        self as usize - 1
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            1 => Some(Self::HeadHead),
            2 => Some(Self::TailTail),
            3 => Some(Self::TailHead),
            4 => Some(Self::HeadTail),
            5 => Some(Self::Parallel),
            6 => Some(Self::Inverse),
            7 => Some(Self::Disjoint),
            _ => None,
        }
    }
}

/// Classifies the ordered pair (f_i, f_j) by endpoint overlap.
pub fn classify_pair(f_i: Triple, f_j: Triple) -> ConnectionType {
    classify_endpoints((f_i.head.0, f_i.tail.0), (f_j.head.0, f_j.tail.0))
}

/// Endpoint-only classification; relations never participate.
pub fn classify_endpoints(f_i: (u32, u32), f_j: (u32, u32)) -> ConnectionType {
    let (hi, ti) = f_i;
    let (hj, tj) = f_j;
    let head_head = hi == hj;
    let tail_tail = ti == tj;
    let tail_head = ti == hj;
    let head_tail = hi == tj;
    if head_head && tail_tail {
        ConnectionType::Parallel
    } else if head_tail && tail_head {
        ConnectionType::Inverse
    } else if head_head {
        ConnectionType::HeadHead
    } else if tail_tail {
        ConnectionType::TailTail
    } else if tail_head {
        ConnectionType::TailHead
    } else if head_tail {
        ConnectionType::HeadTail
    } else {
        ConnectionType::Disjoint
    }
}

/// Dense n×n grid of connection codes for one token sequence, target first.
/// Stored as single bytes; bias vectors are looked up at attention time.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConnectionMatrix {
    n: usize,
    codes: Vec<u8>,
}

impl ConnectionMatrix {
    /// Builds the matrix over the endpoint pairs of the sequence triples,
    /// including the diagonal (a triple shares both endpoints with itself,
    /// so every diagonal entry is 5).
    pub fn build(seq: &[(u32, u32)]) -> Self {
        assert!(!seq.is_empty(), "connection matrix needs a non-empty sequence");
        let n = seq.len();
        let mut codes = vec![0u8; n * n];
        for i in 0..n {
            for j in 0..n {
                codes[i * n + j] = classify_endpoints(seq[i], seq[j]).code();
            }
        }
        ConnectionMatrix { n, codes }
    }

    /// Builds from triples directly.
    pub fn from_triples(seq: &[Triple]) -> Self {
        let pairs: Vec<(u32, u32)> = seq.iter().map(|t| (t.head.0, t.tail.0)).collect();
        Self::build(&pairs)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn code(&self, i: usize, j: usize) -> u8 {
        self.codes[i * self.n + j]
    }

    pub fn get(&self, i: usize, j: usize) -> ConnectionType {
        ConnectionType::from_code(self.code(i, j)).unwrap()
    }

    /// Zero-based bias index at (i, j).
    pub fn index(&self, i: usize, j: usize) -> usize {
        self.code(i, j) as usize - 1
    }

    pub fn codes(&self) -> &[u8] {
        &self.codes
    }
}

/// Prints the matrix as an n×n grid of digits, one row per line.
impl fmt::Display for ConnectionMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for i in 0..self.n {
            for j in 0..self.n {
                write!(f, "{}", self.code(i, j))?;
            }
            if i + 1 < self.n {
                writeln!(f)?;
            }
        }
        Ok(())
    }
}
