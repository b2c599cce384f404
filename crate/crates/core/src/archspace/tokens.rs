use std::ops::Range;

use super::{Block, Cell, CellKind, Genome, Operation};
use crate::error::{Error, Result};

/// Token alphabet for genomes with `B` blocks per cell.
///
/// Input tokens `0..=B` carry a node index; op tokens `B+1..=B+19` carry
/// `Operation::id() + B + 1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TokenVocab {
    pub blocks: usize,
}

impl TokenVocab {
    pub fn new(blocks: usize) -> Self {
        TokenVocab { blocks }
    }

    pub fn size(self) -> usize {
        self.blocks + 1 + Operation::COUNT
    }

    pub fn seq_len(self) -> usize {
        2 * self.blocks * 4
    }

    pub fn op_token(self, op: Operation) -> usize {
        self.blocks + 1 + op.id()
    }

    pub fn op_of(self, token: usize) -> Option<Operation> {
        token
            .checked_sub(self.blocks + 1)
            .and_then(Operation::from_id)
    }
}

/// Range of tokens allowed at `position` of a sequence for `B` blocks.
pub fn legal_tokens(blocks: usize, position: usize) -> Range<usize> {
    let within = position % (blocks * 4);
    let node = within / 4 + 2;
    if within % 2 == 0 {
        0..node
    } else {
        let vocab = TokenVocab::new(blocks);
        blocks + 1..vocab.size()
    }
}

/// Flat token encoding of a genome: per block `[in1, op1, in2, op2]`,
/// normal cell first.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct TokenSeq {
    blocks: usize,
    tokens: Vec<usize>,
}

impl TokenSeq {
    /// Validates `tokens` against the layout for `blocks` blocks per cell.
    pub fn new(blocks: usize, tokens: Vec<usize>) -> Result<Self> {
        if blocks == 0 {
            return Err(Error::InvalidConfig("B must be at least 1".into()));
        }
        let vocab = TokenVocab::new(blocks);
        if tokens.len() != vocab.seq_len() {
            return Err(Error::Token {
                position: tokens.len().min(vocab.seq_len()),
                reason: format!("expected {} tokens, got {}", vocab.seq_len(), tokens.len()),
            });
        }
        for (p, &t) in tokens.iter().enumerate() {
            let legal = legal_tokens(blocks, p);
            if !legal.contains(&t) {
                let what = if p % 2 == 0 { "input" } else { "operation" };
                return Err(Error::Token {
                    position: p,
                    reason: format!("{what} token {t} outside {legal:?}"),
                });
            }
        }
        Ok(TokenSeq { blocks, tokens })
    }

    pub fn blocks(&self) -> usize {
        self.blocks
    }

    pub fn vocab(&self) -> TokenVocab {
        TokenVocab::new(self.blocks)
    }

    pub fn tokens(&self) -> &[usize] {
        &self.tokens
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

pub fn tokenize(g: &Genome) -> TokenSeq {
    let vocab = TokenVocab::new(g.num_blocks());
    let tokens = g
        .cells()
        .into_iter()
        .flat_map(|c| c.blocks())
        .flat_map(|b| {
            [
                b.input1,
                vocab.op_token(b.op1),
                b.input2,
                vocab.op_token(b.op2),
            ]
        })
        .collect();
    TokenSeq {
        blocks: g.num_blocks(),
        tokens,
    }
}

/// Inverse of [`tokenize`]; rejects sequences that break the layout.
pub fn detokenize(blocks: usize, tokens: &[usize]) -> Result<Genome> {
    let seq = TokenSeq::new(blocks, tokens.to_vec())?;
    Ok(seq.to_genome())
}

impl TokenSeq {
    pub fn to_genome(&self) -> Genome {
        let vocab = self.vocab();
        let per_cell = self.blocks * 4;
        let cell = |kind, toks: &[usize]| Cell {
            kind,
            blocks: toks
                .chunks(4)
                .map(|q| Block {
                    input1: q[0],
                    op1: vocab.op_of(q[1]).expect("validated op token"),
                    input2: q[2],
                    op2: vocab.op_of(q[3]).expect("validated op token"),
                })
                .collect(),
        };
        Genome {
            normal: cell(CellKind::Normal, &self.tokens[..per_cell]),
            reduction: cell(CellKind::Reduction, &self.tokens[per_cell..]),
            meta: None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::archspace::sample_genome;

    #[test]
    fn all_identity_op_tokens_equal_b_plus_one() {
        let g = Genome::all_identity(5).unwrap();
        let s = tokenize(&g);
        assert_eq!(s.len(), 40);
        for (p, &t) in s.tokens().iter().enumerate() {
            if p % 2 == 1 {
                assert_eq!(t, 6);
            } else {
                assert_eq!(t, 0);
            }
        }
    }

    #[test]
    fn legal_ranges_follow_block_position() {
        assert_eq!(legal_tokens(5, 0), 0..2);
        assert_eq!(legal_tokens(5, 2), 0..2);
        assert_eq!(legal_tokens(5, 1), 6..25);
        assert_eq!(legal_tokens(5, 16), 0..6);
        // first block of the reduction cell
        assert_eq!(legal_tokens(5, 20), 0..2);
        assert_eq!(legal_tokens(5, 39), 6..25);
    }

    #[test]
    fn detokenize_rejects_illegal_input() {
        let mut toks = tokenize(&sample_genome(1, 5).unwrap()).tokens().to_vec();
        toks[2] = 2;
        let err = detokenize(5, &toks).unwrap_err();
        assert!(matches!(err, Error::Token { position: 2, .. }), "{err}");
        toks[2] = 0;
        toks[3] = 3;
        assert!(detokenize(5, &toks).is_err());
        assert!(detokenize(5, &toks[..39]).is_err());
    }
}
