use randattract::pathwise::integrate_semilinear;
use randattract::{
    sample_two_sided_path, ChainBuilder, DVector, DiffusionField, NoiseSpectrum, NonlinearitySpec,
    SemilinearProblem,
};

fn main() -> randattract::Result<()> {
    let field = DiffusionField::default();
    let spectrum = NoiseSpectrum::new(64, 1.0)?;
    let path = sample_two_sided_path(&spectrum, -field.a_drv, 1.0, 1.0 / 256.0, 7)?;
    let chain = ChainBuilder::new(field, 64)?.build(&path, 0.0, 1.0)?;
    let mut u0 = DVector::zeros(64);
    u0[0] = 0.5;
    let problem = SemilinearProblem::new(field, NonlinearitySpec::default(), u0);
    let traj = integrate_semilinear(&problem, &chain, &path)?;
    println!("{:?} at t = 1: |u| = {}", traj.status, traj.last().norm());
    Ok(())
}
