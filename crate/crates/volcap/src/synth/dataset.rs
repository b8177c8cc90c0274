//! Frame-by-frame dataset generation: pose the body, render mattes, build
//! hulls at native and coarse resolutions, and package training triplets.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::body::{BodyModel, MotionSpec, RigSpec};
use super::kinematics::{forward_kinematics, posed_capsules, RootTransform};
use super::render::render_matte;
use super::SynthError;
use crate::camera::{CameraIntrinsics, CameraPose, CameraView, SoftMatte};
use crate::grid::{Bbox, VoxelGrid};
use crate::hull::{build_pvh, FusionMode};
use crate::network::TrainingTriplet;
use crate::resample::{box_downsample, tricubic_upsample};
use crate::skeleton::SkeletonFrame;
use nalgebra::Vector3;

/// Everything generated for one frame.
#[derive(Debug, Clone)]
pub struct GeneratedFrame {
    pub skeleton: SkeletonFrame,
    pub mattes: Vec<SoftMatte>,
    /// Coarse 32^3 hull, the pipeline input.
    pub coarse: VoxelGrid,
    /// Native-resolution hull, the reconstruction target.
    pub native: VoxelGrid,
}

/// A generated capture session.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub frames: Vec<GeneratedFrame>,
    pub cameras: Vec<(CameraIntrinsics, CameraPose)>,
    pub bbox: Bbox,
    pub scale: usize,
    pub seed: u64,
}

impl Dataset {
    /// Training triplets: coarse hulls tricubic-upsampled to the native
    /// resolution, paired with the native hulls and skeletons.
    pub fn triplets(&self) -> Result<Vec<TrainingTriplet>, SynthError> {
        self.frames
            .iter()
            .map(|f| {
                let input = tricubic_upsample(&f.coarse, self.scale)?;
                Ok(TrainingTriplet {
                    input_volume: input,
                    target_volume: f.native.clone(),
                    target_joints: f.skeleton.clone(),
                })
            })
            .collect()
    }
}

/// Factor by which camera resolution is decimated for the scale-1 coarse
/// build, mimicking the distant low-resolution capture the refinement task
/// starts from.
const SCALE1_MATTE_DECIMATION: usize = 4;

/// Generates a deterministic dataset. The seed perturbs joint phases and
/// the root trajectory so different seeds give different motions of the
/// same style; everything else is a pure function of the specs.
///
/// For scales 2 and 4 the native hull is built at `(32 * scale)^3` and
/// box-averaged down to 32^3 for the coarse input. At scale 1 that
/// construction degenerates (input and target would coincide and the
/// refinement task would vanish), so the target is instead box-averaged
/// from an oversampled 64^3 build while the coarse input is built at 32^3
/// through cameras decimated 4x, reproducing the low-resolution capture
/// regime the refinement is for.
pub fn generate_dataset(
    body: &BodyModel,
    motion: &MotionSpec,
    rig: &RigSpec,
    coarse_res: usize,
    scale: usize,
    seed: u64,
    mode: FusionMode,
) -> Result<Dataset, SynthError> {
    body.validate()?;
    motion.validate(body)?;
    if !matches!(scale, 1 | 2 | 4) {
        return Err(SynthError::Geometry(
            crate::error::GeometryError::UnsupportedFactor(scale),
        ));
    }
    let cameras = rig.cameras()?;
    let bbox = rig.capture_bbox();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let phase_jitter: Vec<f64> = (0..body.joint_count())
        .map(|_| rng.gen_range(-0.3..0.3))
        .collect();
    let root_phase: f64 = rng.gen_range(0.0..std::f64::consts::TAU);

    let frame_indices: Vec<usize> = (0..motion.frame_count).collect();
    let frames: Vec<Result<GeneratedFrame, SynthError>> = frame_indices
        .par_iter()
        .map(|&fi| {
            generate_frame(
                body,
                motion,
                &cameras,
                bbox,
                coarse_res,
                scale,
                &phase_jitter,
                root_phase,
                fi,
                mode,
            )
        })
        .collect();
    let frames = frames.into_iter().collect::<Result<Vec<_>, _>>()?;

    Ok(Dataset {
        frames,
        cameras,
        bbox,
        scale,
        seed,
    })
}

#[allow(clippy::too_many_arguments)]
fn generate_frame(
    body: &BodyModel,
    motion: &MotionSpec,
    cameras: &[(CameraIntrinsics, CameraPose)],
    bbox: Bbox,
    coarse_res: usize,
    scale: usize,
    phase_jitter: &[f64],
    root_phase: f64,
    frame_index: usize,
    mode: FusionMode,
) -> Result<GeneratedFrame, SynthError> {
    let t = frame_index as f64 / motion.frame_rate;
    let angles: Vec<f64> = motion
        .joint_tracks
        .iter()
        .zip(phase_jitter)
        .map(|(track, &dp)| {
            track.amplitude
                * (std::f64::consts::TAU * track.frequency * t + track.phase + dp).sin()
        })
        .collect();
    let sway = std::f64::consts::TAU * motion.root_sway_frequency * t + root_phase;
    let root = RootTransform {
        translation: Vector3::new(
            motion.root_sway_radius * sway.cos(),
            motion.root_sway_radius * sway.sin(),
            0.0,
        ),
        yaw: motion.root_yaw_amplitude * (sway * 2.0).sin(),
    };
    let skeleton = forward_kinematics(body, &angles, root)?;
    let capsules = posed_capsules(body, &skeleton);

    let mattes: Vec<SoftMatte> = cameras
        .iter()
        .map(|(intr, pose)| render_matte(&capsules, intr, pose))
        .collect();
    let views: Vec<CameraView> = cameras
        .iter()
        .zip(&mattes)
        .map(|((intr, pose), matte)| {
            CameraView::new(intr.clone(), pose.clone(), matte.clone())
        })
        .collect::<Result<_, _>>()?;

    let (coarse, native) = if scale == 1 {
        let oversampled = build_pvh(
            &views,
            bbox.min_point(),
            bbox.max_point(),
            [coarse_res * 2; 3],
            mode,
        )?;
        let native = box_downsample(&oversampled, 2)?;
        let coarse = build_pvh(
            &views,
            bbox.min_point(),
            bbox.max_point(),
            [coarse_res; 3],
            mode,
        )?;
        (coarse, native)
    } else {
        let native = build_pvh(
            &views,
            bbox.min_point(),
            bbox.max_point(),
            [coarse_res * scale; 3],
            mode,
        )?;
        let coarse = box_downsample(&native, scale)?;
        (coarse, native)
    };

    Ok(GeneratedFrame {
        skeleton,
        mattes,
        coarse,
        native,
    })
}
