use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use serde::{Deserialize, Serialize};

use super::{attention_mask, IclSequence, Scheme, TokenType};
use crate::error::{Error, Result};

/// One JSON object per sequence. Tokens are little-endian `f32` in base64;
/// the mask is implied by the scheme and not stored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceDump {
    pub scheme: Scheme,
    pub d: usize,
    pub t: usize,
    pub tokens_b64: String,
    pub token_types: Vec<TokenType>,
    pub positions: Vec<u32>,
    pub predict_at: Vec<usize>,
    pub targets: Vec<u8>,
    pub query_groups: Vec<u8>,
    pub context_len_at: Vec<usize>,
    pub context_group_counts: Vec<[u32; 4]>,
}

impl SequenceDump {
    pub fn from_sequence(seq: &IclSequence) -> Self {
        let mut bytes = Vec::with_capacity(seq.tokens.len() * 4);
        for v in &seq.tokens {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        SequenceDump {
            scheme: seq.scheme,
            d: seq.d,
            t: seq.len(),
            tokens_b64: STANDARD.encode(bytes),
            token_types: seq.token_types.clone(),
            positions: seq.positions.clone(),
            predict_at: seq.predict_at.clone(),
            targets: seq.targets.clone(),
            query_groups: seq.query_groups.clone(),
            context_len_at: seq.context_len_at.clone(),
            context_group_counts: seq.context_group_counts.clone(),
        }
    }

    pub fn into_sequence(self) -> Result<IclSequence> {
        let bytes = STANDARD.decode(&self.tokens_b64).map_err(|e| Error::Format(format!("bad token payload: {e}")))?;
        if bytes.len() != self.t * self.d * 4 {
            return Err(Error::DimensionMismatch { expected: self.t * self.d * 4, got: bytes.len() });
        }
        if self.token_types.len() != self.t || self.positions.len() != self.t {
            return Err(Error::Format("per-token arrays disagree with the sequence length".into()));
        }
        let tokens = bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
        Ok(IclSequence {
            scheme: self.scheme,
            d: self.d,
            tokens,
            token_types: self.token_types,
            positions: self.positions,
            mask: attention_mask(self.scheme, self.t)?,
            predict_at: self.predict_at,
            targets: self.targets,
            query_groups: self.query_groups,
            context_len_at: self.context_len_at,
            context_group_counts: self.context_group_counts,
        })
    }
}

pub fn to_json_line(seq: &IclSequence) -> String {
    serde_json::to_string(&SequenceDump::from_sequence(seq)).expect("sequence dump serializes")
}

pub fn read_json_line(line: &str) -> Result<IclSequence> {
    let dump: SequenceDump =
        serde_json::from_str(line.trim()).map_err(|e| Error::Format(format!("bad sequence line: {e}")))?;
    dump.into_sequence()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Example;
    use crate::rng::stream;
    use crate::seqbuild::{build_proposed_sequence, AnnotationCodebook, LabelMode, SequenceRecipe};

    #[test]
    fn round_trip() {
        let ex: Vec<Example> = (0..8)
            .map(|i| Example::new((0..6).map(|k| (i * k) as f32 * 0.37 - 1.0).collect(), (i % 2) as u8, (i / 4) as u8))
            .collect();
        let mut recipe = SequenceRecipe::new(Scheme::Proposed, 4);
        recipe.permute = true;
        recipe.hint_prob = 0.5;
        let cb = AnnotationCodebook::new(6, 1.0, LabelMode::LabelOnly, &mut stream(0, "cb", 0)).unwrap();
        let seq = build_proposed_sequence(&ex[..4], &ex[4..], &recipe, &cb, &mut stream(0, "s", 0)).unwrap();
        let line = to_json_line(&seq);
        assert!(!line.contains('\n'));
        assert_eq!(read_json_line(&line).unwrap(), seq);
    }

    #[test]
    fn rejects_truncated_payload() {
        let mut dump = SequenceDump {
            scheme: Scheme::Naive,
            d: 2,
            t: 1,
            tokens_b64: STANDARD.encode([0u8; 8]),
            token_types: vec![TokenType::ContextX],
            positions: vec![0],
            predict_at: vec![0],
            targets: vec![0],
            query_groups: vec![0],
            context_len_at: vec![0],
            context_group_counts: vec![[0; 4]],
        };
        assert!(dump.clone().into_sequence().is_ok());
        dump.tokens_b64 = STANDARD.encode([0u8; 4]);
        assert!(dump.into_sequence().is_err());
        assert!(read_json_line("{").is_err());
    }
}
