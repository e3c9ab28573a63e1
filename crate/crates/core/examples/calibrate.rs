//! Fits the optical pumping model and the effective shot model, printing the
//! calibrated parameters.

use nuclear_readout::analysis::{fit_shot_model, FitOptions, FitTargets};
use nuclear_readout::optics::{default_constraints, fit_pump_rates, OpticalModel};
use nuclear_readout::PhysicalParams;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let params = PhysicalParams::default();
    let pump = fit_pump_rates(&OpticalModel::unfitted(&params), &default_constraints())?;
    println!("optical model: {:#?}", pump.model);
    println!("pump residual {:.3e} after {} iterations", pump.residual, pump.iterations);

    let fit = fit_shot_model(&FitTargets::reference(), &FitOptions::default())?;
    println!("shot model: {:#?}", fit.model);
    println!("predicted: {:#?}", fit.predicted);
    println!(
        "residual {:.3e}, worst {} at {:.2} %, {} evaluations",
        fit.residual,
        fit.worst_statistic,
        100.0 * fit.worst_relative_error,
        fit.evaluations
    );
    Ok(())
}
