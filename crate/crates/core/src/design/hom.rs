use super::{check_nu, HomFilters};
use crate::channel::{min_phase, split_target, Cir, MinPhaseOptions};
use crate::error::Result;

/// Homomorphic shortener: all-pass prefilter to the minimum-phase
/// equivalent, whose first `ν+1` taps form the target and the rest the
/// feedback filter.
pub fn design_hom(cir: &Cir, nu: usize, opts: &MinPhaseOptions) -> Result<HomFilters> {
    check_nu(cir, nu)?;
    let mp = min_phase(cir, opts)?;
    let (h_f, h_b) = split_target(&mp.h_tilde, nu)?;
    Ok(HomFilters { w_hom: mp.w_hom, h_f, h_b, h_tilde: mp.h_tilde, allpass_deviation: mp.allpass_deviation })
}
