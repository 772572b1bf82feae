//! Bitshift trellis-coded quantization.
//!
//! A length-`t` vector is encoded as a bit string `r` of `s * t / v` bits.
//! Step `i` decodes weights `[i*v, (i+1)*v)` from the `l`-bit window
//! `r[i*s .. i*s + l]` (big-endian within the window), with indices wrapping
//! around the end of `r` (tail-biting). Consecutive windows overlap by
//! `l - s` bits, which makes the codeword set a trellis: the state after
//! step `i` is the low `l - s` bits of window `i`.
//!
//! Encoding runs the Viterbi algorithm twice: pass 1 is unconstrained over
//! start states and selects the best end state; pass 2 fixes that state as
//! both start and end (the tail-biting wrap state) and is exactly optimal
//! within it. Survivor ties are broken toward the lowest predecessor state,
//! so encoding is deterministic.

use crate::codebooks::TrellisConfig;
use crate::error::{QpalError, Result};

/// An encoded trellis vector: the bit string, the per-step survivor states
/// (diagnostic), the decoded reconstruction, and its squared error against
/// the encoder input.
#[derive(Debug, Clone, PartialEq)]
pub struct TrellisPath {
    pub bits: Vec<u8>,
    pub per_step_states: Vec<u32>,
    pub reconstruction: Vec<f32>,
    pub sq_error: f64,
}

fn check_lut(cfg: &TrellisConfig, lut: &[f32]) -> Result<()> {
    cfg.validate()?;
    let expected = (1usize << cfg.l) * cfg.v as usize;
    if lut.len() != expected {
        return Err(QpalError::ConfigMismatch(format!(
            "LUT has {} values, expected 2^{} x {}",
            lut.len(),
            cfg.l,
            cfg.v
        )));
    }
    if cfg.bit_len() < cfg.l as usize {
        return Err(QpalError::InvalidConfig(format!(
            "bit string of {} bits is shorter than one window ({})",
            cfg.bit_len(),
            cfg.l
        )));
    }
    Ok(())
}

/// Sliding-window LUT lookup with tail-biting wraparound.
pub fn tcq_decode(bits: &[u8], cfg: &TrellisConfig, lut: &[f32]) -> Result<Vec<f32>> {
    check_lut(cfg, lut)?;
    let n_bits = cfg.bit_len();
    if bits.len() != n_bits {
        return Err(QpalError::LengthMismatch { expected: n_bits, found: bits.len() });
    }
    let (l, s, v) = (cfg.l as usize, cfg.s as usize, cfg.v as usize);
    let mut out = Vec::with_capacity(cfg.t);
    for i in 0..cfg.n_steps() {
        let mut idx = 0usize;
        for j in 0..l {
            idx = (idx << 1) | bits[(i * s + j) % n_bits] as usize;
        }
        out.extend_from_slice(&lut[idx * v..idx * v + v]);
    }
    Ok(out)
}

/// One Viterbi relaxation over all `2^l` windows. Iteration order is
/// (predecessor, fresh bits) ascending with strict improvement, which breaks
/// survivor ties toward the lowest predecessor state.
fn relax_step<const V: usize>(
    dp_old: &[f64],
    dp_new: &mut [f64],
    mut bp_row: Option<&mut [u32]>,
    lut: &[f64],
    tgt: &[f64; V],
    s: usize,
    state_mask: usize,
) {
    let n_fresh = 1usize << s;
    dp_new.fill(f64::INFINITY);
    for (prev, &pc) in dp_old.iter().enumerate() {
        if pc == f64::INFINITY {
            continue;
        }
        let w_base = prev << s;
        for fresh in 0..n_fresh {
            let w = w_base | fresh;
            let row = &lut[w * V..w * V + V];
            let mut c = pc;
            for j in 0..V {
                let d = tgt[j] - row[j];
                c += d * d;
            }
            let nxt = w & state_mask;
            if c < dp_new[nxt] {
                dp_new[nxt] = c;
                if let Some(bp) = bp_row.as_deref_mut() {
                    bp[nxt] = w as u32;
                }
            }
        }
    }
}

fn run_pass<const V: usize>(
    target: &[f64],
    cfg: &TrellisConfig,
    lut: &[f64],
    init: Vec<f64>,
    mut backpointers: Option<&mut Vec<u32>>,
) -> Vec<f64> {
    let s = cfg.s as usize;
    let n_states = 1usize << (cfg.l - cfg.s);
    let state_mask = n_states - 1;
    let n_steps = cfg.n_steps();
    let mut dp_old = init;
    let mut dp_new = vec![f64::INFINITY; n_states];
    for step in 0..n_steps {
        let mut tgt = [0.0f64; V];
        tgt.copy_from_slice(&target[step * V..(step + 1) * V]);
        let bp_row = backpointers
            .as_deref_mut()
            .map(|bp| &mut bp[step * n_states..(step + 1) * n_states]);
        relax_step::<V>(&dp_old, &mut dp_new, bp_row, lut, &tgt, s, state_mask);
        std::mem::swap(&mut dp_old, &mut dp_new);
    }
    dp_old
}

fn dispatch_pass(
    target: &[f64],
    cfg: &TrellisConfig,
    lut: &[f64],
    init: Vec<f64>,
    backpointers: Option<&mut Vec<u32>>,
) -> Vec<f64> {
    match cfg.v {
        1 => run_pass::<1>(target, cfg, lut, init, backpointers),
        2 => run_pass::<2>(target, cfg, lut, init, backpointers),
        _ => run_pass_generic(target, cfg, lut, init, backpointers),
    }
}

/// Fallback for vector sizes without a monomorphized path.
fn run_pass_generic(
    target: &[f64],
    cfg: &TrellisConfig,
    lut: &[f64],
    init: Vec<f64>,
    mut backpointers: Option<&mut Vec<u32>>,
) -> Vec<f64> {
    let (s, v) = (cfg.s as usize, cfg.v as usize);
    let n_states = 1usize << (cfg.l - cfg.s);
    let state_mask = n_states - 1;
    let n_fresh = 1usize << s;
    let mut dp_old = init;
    let mut dp_new = vec![f64::INFINITY; n_states];
    for step in 0..cfg.n_steps() {
        dp_new.fill(f64::INFINITY);
        let tgt = &target[step * v..(step + 1) * v];
        let bp_row = backpointers
            .as_deref_mut()
            .map(|bp| &mut bp[step * n_states..(step + 1) * n_states]);
        let mut bp_row = bp_row;
        for (prev, &pc) in dp_old.iter().enumerate() {
            if pc == f64::INFINITY {
                continue;
            }
            for fresh in 0..n_fresh {
                let w = (prev << s) | fresh;
                let mut c = pc;
                for j in 0..v {
                    let d = tgt[j] - lut[w * v + j];
                    c += d * d;
                }
                let nxt = w & state_mask;
                if c < dp_new[nxt] {
                    dp_new[nxt] = c;
                    if let Some(bp) = bp_row.as_deref_mut() {
                        bp[nxt] = w as u32;
                    }
                }
            }
        }
        std::mem::swap(&mut dp_old, &mut dp_new);
    }
    dp_old
}

/// Two-pass tail-biting encoder: pass 1 picks the wrap state, pass 2 encodes
/// optimally within it.
pub fn tcq_encode(v: &[f32], cfg: &TrellisConfig, lut: &[f32]) -> Result<TrellisPath> {
    check_lut(cfg, lut)?;
    if v.len() != cfg.t {
        return Err(QpalError::LengthMismatch { expected: cfg.t, found: v.len() });
    }
    let n_states = 1usize << (cfg.l - cfg.s);
    let target: Vec<f64> = v.iter().map(|&x| x as f64).collect();
    let lut64: Vec<f64> = lut.iter().map(|&x| x as f64).collect();

    // Pass 1: free start state.
    let final_costs = dispatch_pass(&target, cfg, &lut64, vec![0.0; n_states], None);
    let mut wrap_state = 0usize;
    let mut best = f64::INFINITY;
    for (i, &c) in final_costs.iter().enumerate() {
        if c < best {
            best = c;
            wrap_state = i;
        }
    }
    encode_fixed(&target, v, cfg, &lut64, lut, wrap_state)
}

/// Viterbi encoding constrained to a fixed tail-biting wrap state (start
/// state == end state == `state`). Exactly optimal over all bit strings whose
/// leading `l - s` bits encode `state`.
pub fn tcq_encode_fixed_start(
    v: &[f32],
    cfg: &TrellisConfig,
    lut: &[f32],
    state: usize,
) -> Result<TrellisPath> {
    check_lut(cfg, lut)?;
    if v.len() != cfg.t {
        return Err(QpalError::LengthMismatch { expected: cfg.t, found: v.len() });
    }
    let n_states = 1usize << (cfg.l - cfg.s);
    if state >= n_states {
        return Err(QpalError::InvalidConfig(format!(
            "start state {state} out of range for {n_states} states"
        )));
    }
    let target: Vec<f64> = v.iter().map(|&x| x as f64).collect();
    let lut64: Vec<f64> = lut.iter().map(|&x| x as f64).collect();
    encode_fixed(&target, v, cfg, &lut64, lut, state)
}

fn encode_fixed(
    target: &[f64],
    v_in: &[f32],
    cfg: &TrellisConfig,
    lut64: &[f64],
    lut: &[f32],
    wrap_state: usize,
) -> Result<TrellisPath> {
    let (l, s) = (cfg.l as usize, cfg.s as usize);
    let n_states = 1usize << (l - s);
    let state_mask = n_states - 1;
    let n_steps = cfg.n_steps();
    let n_fresh = 1usize << s;

    let mut init = vec![f64::INFINITY; n_states];
    init[wrap_state] = 0.0;
    let mut backpointers = vec![0u32; n_steps * n_states];
    let final_costs = dispatch_pass(target, cfg, lut64, init, Some(&mut backpointers));
    debug_assert!(final_costs[wrap_state].is_finite());

    // Backtrack the window sequence from the constrained end state.
    let mut windows = vec![0u32; n_steps];
    let mut state = wrap_state;
    let mut per_step_states = vec![0u32; n_steps];
    for step in (0..n_steps).rev() {
        let w = backpointers[step * n_states + state];
        windows[step] = w;
        per_step_states[step] = (w as usize & state_mask) as u32;
        state = (w >> s) as usize;
    }
    debug_assert_eq!(state, wrap_state, "pass 2 must start at the wrap state");

    // Emit bits: the wrap state fills positions [0, l - s), each step's fresh
    // bits follow, MSB first; wrapped positions rewrite the same values.
    let n_bits = cfg.bit_len();
    let mut bits = vec![0u8; n_bits];
    for (j, bit) in bits.iter_mut().take(l - s).enumerate() {
        *bit = ((wrap_state >> (l - s - 1 - j)) & 1) as u8;
    }
    for (i, &w) in windows.iter().enumerate() {
        let fresh = w as usize & (n_fresh - 1);
        for j in 0..s {
            let pos = (l - s + i * s + j) % n_bits;
            let bit = ((fresh >> (s - 1 - j)) & 1) as u8;
            debug_assert!(
                pos >= l - s || bits[pos] == bit,
                "tail-biting wrap bits must agree with the start state"
            );
            bits[pos] = bit;
        }
    }

    let reconstruction = tcq_decode(&bits, cfg, lut)?;
    let sq_error: f64 = v_in
        .iter()
        .zip(&reconstruction)
        .map(|(&a, &b)| (a as f64 - b as f64).powi(2))
        .sum();
    Ok(TrellisPath { bits, per_step_states, reconstruction, sq_error })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{chacha, standard_normal};
    use rand::Rng;

    fn toy_cfg() -> TrellisConfig {
        TrellisConfig::new(4, 1, 2, 4, 2).unwrap()
    }

    fn toy_lut(seed: u64) -> Vec<f32> {
        standard_normal(seed, 16)
    }

    /// Exact minimum squared error over every bit string of `n_bits` bits.
    fn exhaustive_min(v: &[f32], cfg: &TrellisConfig, lut: &[f32]) -> f64 {
        let n_bits = cfg.bit_len();
        let mut best = f64::INFINITY;
        for word in 0u64..(1 << n_bits) {
            let bits: Vec<u8> =
                (0..n_bits).map(|j| ((word >> (n_bits - 1 - j)) & 1) as u8).collect();
            let rec = tcq_decode(&bits, cfg, lut).unwrap();
            let err: f64 =
                v.iter().zip(&rec).map(|(&a, &b)| (a as f64 - b as f64).powi(2)).sum();
            if err < best {
                best = err;
            }
        }
        best
    }

    #[test]
    fn all_zero_bits_decode_to_first_entry() {
        let cfg = toy_cfg();
        let lut = toy_lut(3);
        let out = tcq_decode(&[0; 8], &cfg, &lut).unwrap();
        assert_eq!(out, vec![lut[0]; 4]);
    }

    #[test]
    fn last_window_wraps_around() {
        let cfg = toy_cfg();
        // Distinct powers of two per index let us read windows off the output.
        let lut: Vec<f32> = (0..16).map(|i| (1 << i) as f32).collect();
        let bits = [1u8, 0, 1, 1, 0, 0, 1, 1];
        let out = tcq_decode(&bits, &cfg, &lut).unwrap();
        // Step 3 reads bits 6,7,0,1 = 1,1,1,0 = index 14.
        assert_eq!(out[3], lut[0b1110]);
        assert_eq!(out[0], lut[0b1011]);
        assert_eq!(out[1], lut[0b1100]);
        assert_eq!(out[2], lut[0b0011]);
    }

    #[test]
    fn decode_matches_recorded_reconstruction() {
        let cfg = toy_cfg();
        let lut = toy_lut(5);
        let v = standard_normal(17, 4);
        let path = tcq_encode(&v, &cfg, &lut).unwrap();
        let rec = tcq_decode(&path.bits, &cfg, &lut).unwrap();
        assert_eq!(rec, path.reconstruction);
    }

    #[test]
    fn exact_codeword_has_zero_error() {
        let cfg = toy_cfg();
        let lut = toy_lut(7);
        let bits = [0u8, 1, 1, 0, 1, 0, 0, 1];
        let rec = tcq_decode(&bits, &cfg, &lut).unwrap();
        let path = tcq_encode(&rec, &cfg, &lut).unwrap();
        assert_eq!(path.sq_error, 0.0);
        assert_eq!(path.reconstruction, rec);
    }

    #[test]
    fn encoder_matches_exhaustive_oracle() {
        let cfg = toy_cfg();
        let lut = toy_lut(11);
        let mut rng = chacha(23);
        let mut exact = 0;
        let trials = 40;
        for _ in 0..trials {
            let v: Vec<f32> = (0..4).map(|_| rng.random::<f32>() * 4.0 - 2.0).collect();
            let best = exhaustive_min(&v, &cfg, &lut);
            let got = tcq_encode(&v, &cfg, &lut).unwrap().sq_error;
            assert!(got >= best - 1e-9, "encoder beat the exhaustive minimum: {got} < {best}");
            if got <= best + 1e-9 {
                exact += 1;
            }
        }
        assert!(exact >= trials - 1, "only {exact}/{trials} matched the exhaustive minimum");
    }

    #[test]
    fn fixed_start_is_exactly_optimal() {
        // Against brute force restricted to bit strings with the given start
        // state prefix, the constrained encoder is exact, not heuristic.
        let cfg = toy_cfg();
        let lut = toy_lut(13);
        let mut rng = chacha(31);
        let n_bits = cfg.bit_len();
        for trial in 0..20 {
            let v: Vec<f32> = (0..4).map(|_| rng.random::<f32>() * 4.0 - 2.0).collect();
            let start = trial % 4;
            let mut best = f64::INFINITY;
            for word in 0u64..(1 << n_bits) {
                let bits: Vec<u8> =
                    (0..n_bits).map(|j| ((word >> (n_bits - 1 - j)) & 1) as u8).collect();
                if ((bits[0] as usize) << 1 | bits[1] as usize) != start {
                    continue;
                }
                let rec = tcq_decode(&bits, &cfg, &lut).unwrap();
                let err: f64 =
                    v.iter().zip(&rec).map(|(&a, &b)| (a as f64 - b as f64).powi(2)).sum();
                best = best.min(err);
            }
            let got = tcq_encode_fixed_start(&v, &cfg, &lut, start).unwrap().sq_error;
            assert!((got - best).abs() <= 1e-9, "start {start}: {got} vs {best}");
        }
    }

    #[test]
    fn length_and_config_mismatches() {
        let cfg = toy_cfg();
        let lut = toy_lut(1);
        assert!(matches!(
            tcq_decode(&[0; 7], &cfg, &lut),
            Err(QpalError::LengthMismatch { .. })
        ));
        assert!(matches!(
            tcq_encode(&[0.0; 4], &cfg, &lut[..8]),
            Err(QpalError::ConfigMismatch(_))
        ));
        assert!(matches!(
            tcq_encode(&[0.0; 3], &cfg, &lut),
            Err(QpalError::LengthMismatch { .. })
        ));
    }
}
