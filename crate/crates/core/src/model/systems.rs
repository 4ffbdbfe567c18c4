use super::{
    Actuator, ContactPoint, CoordinateInertia, MassPoint, ModelParams, ModelSpec, PointChain, Segment, Surface,
};

fn seg(angle: &[usize], offset: [f64; 2]) -> Segment {
    Segment {
        angle: angle.iter().map(|&j| (j, 1.0)).collect(),
        offset,
        extension: vec![],
    }
}

fn chain(base: Option<[usize; 2]>, segments: Vec<Segment>) -> PointChain {
    PointChain { base, segments }
}

fn inertia(inertia: f64, coords: &[usize]) -> CoordinateInertia {
    CoordinateInertia {
        inertia,
        rate: coords.iter().map(|&j| (j, 1.0)).collect(),
    }
}

fn mass(name: impl Into<String>, mass: f64, chain: PointChain) -> MassPoint {
    MassPoint {
        name: name.into(),
        mass,
        chain,
    }
}

fn ground(name: impl Into<String>, chain: PointChain, friction: f64) -> ContactPoint {
    ContactPoint {
        name: name.into(),
        chain,
        surface: Surface::Ground,
        friction,
    }
}

pub(super) fn build(params: &ModelParams) -> ModelSpec {
    match *params {
        ModelParams::Particle {
            mass: m,
            friction,
            timestep,
            gravity,
        } => {
            let base = Some([0, 1]);
            ModelSpec {
                name: "particle".into(),
                nq: 2,
                nu: 2,
                timestep,
                gravity,
                masses: vec![mass("point", m, chain(base, vec![]))],
                inertias: vec![],
                actuators: vec![Actuator::Coordinate { index: 0 }, Actuator::Coordinate { index: 1 }],
                contacts: vec![ground("point", chain(base, vec![]), friction)],
                base,
                params: params.clone(),
            }
        }
        ModelParams::Hopper {
            body_mass,
            leg_mass,
            body_inertia,
            leg_inertia,
            friction,
            timestep,
            gravity,
        } => {
            let base = Some([0, 1]);
            let foot = Segment {
                angle: vec![(2, 1.0)],
                offset: [0.0, 0.0],
                extension: vec![(3, [0.0, -1.0])],
            };
            ModelSpec {
                name: "hopper".into(),
                nq: 4,
                nu: 2,
                timestep,
                gravity,
                masses: vec![mass("body", body_mass + leg_mass, chain(base, vec![]))],
                inertias: vec![inertia(body_inertia + leg_inertia, &[2]), inertia(leg_mass, &[3])],
                actuators: vec![
                    Actuator::Coordinate { index: 2 },
                    Actuator::AxialLeg {
                        x: 0,
                        z: 1,
                        angle: 2,
                        length: 3,
                    },
                ],
                contacts: vec![ground("foot", chain(base, vec![foot]), friction)],
                base,
                params: params.clone(),
            }
        }
        ModelParams::Pushbot {
            pendulum_mass,
            pendulum_length,
            pendulum_inertia,
            arm_mass,
            wall_distance,
            friction,
            timestep,
            gravity,
        } => {
            let tip = chain(None, vec![seg(&[0], [0.0, pendulum_length])]);
            let hand = chain(
                None,
                vec![Segment {
                    angle: vec![(0, 1.0)],
                    offset: [0.0, pendulum_length],
                    extension: vec![(1, [1.0, 0.0])],
                }],
            );
            ModelSpec {
                name: "pushbot".into(),
                nq: 2,
                nu: 2,
                timestep,
                gravity,
                masses: vec![mass("pendulum", pendulum_mass, tip), mass("arm", arm_mass, hand.clone())],
                inertias: vec![inertia(pendulum_inertia, &[0])],
                actuators: vec![Actuator::Coordinate { index: 0 }, Actuator::Coordinate { index: 1 }],
                contacts: vec![
                    ContactPoint {
                        name: "left_wall".into(),
                        chain: hand.clone(),
                        surface: Surface::LeftWall {
                            position: -wall_distance,
                        },
                        friction,
                    },
                    ContactPoint {
                        name: "right_wall".into(),
                        chain: hand,
                        surface: Surface::RightWall {
                            position: wall_distance,
                        },
                        friction,
                    },
                ],
                base: None,
                params: params.clone(),
            }
        }
        ModelParams::Quadruped {
            torso_mass,
            torso_inertia,
            hip_offset,
            thigh_mass,
            thigh_length,
            thigh_inertia,
            calf_mass,
            calf_length,
            calf_inertia,
            friction,
            timestep,
            gravity,
        } => {
            let base = Some([0, 1]);
            let mut masses = vec![mass("torso", torso_mass, chain(base, vec![]))];
            let mut inertias = vec![inertia(torso_inertia, &[2])];
            let mut contacts = Vec::new();
            let names = ["front_left", "front_right", "back_left", "back_right"];
            for (leg, name) in names.iter().enumerate() {
                let hip = 3 + 2 * leg;
                let knee = hip + 1;
                let sign = if leg < 2 { 1.0 } else { -1.0 };
                let hip_seg = seg(&[2], [sign * hip_offset, 0.0]);
                masses.push(mass(
                    format!("{name}_thigh"),
                    thigh_mass,
                    chain(base, vec![hip_seg.clone(), seg(&[2, hip], [0.0, -0.5 * thigh_length])]),
                ));
                masses.push(mass(
                    format!("{name}_calf"),
                    calf_mass,
                    chain(
                        base,
                        vec![
                            hip_seg.clone(),
                            seg(&[2, hip], [0.0, -thigh_length]),
                            seg(&[2, hip, knee], [0.0, -0.5 * calf_length]),
                        ],
                    ),
                ));
                inertias.push(inertia(thigh_inertia, &[2, hip]));
                inertias.push(inertia(calf_inertia, &[2, hip, knee]));
                contacts.push(ground(
                    format!("{name}_foot"),
                    chain(
                        base,
                        vec![
                            hip_seg,
                            seg(&[2, hip], [0.0, -thigh_length]),
                            seg(&[2, hip, knee], [0.0, -calf_length]),
                        ],
                    ),
                    friction,
                ));
            }
            ModelSpec {
                name: "quadruped".into(),
                nq: 11,
                nu: 8,
                timestep,
                gravity,
                masses,
                inertias,
                actuators: (3..11).map(|index| Actuator::Coordinate { index }).collect(),
                contacts,
                base,
                params: params.clone(),
            }
        }
        ModelParams::Biped {
            torso_mass,
            torso_inertia,
            torso_height,
            thigh_mass,
            thigh_length,
            thigh_inertia,
            calf_mass,
            calf_length,
            calf_inertia,
            foot_mass,
            foot_inertia,
            toe_length,
            heel_length,
            friction,
            timestep,
            gravity,
        } => {
            let base = Some([0, 1]);
            let mut masses = vec![mass("torso", torso_mass, chain(base, vec![seg(&[2], [0.0, torso_height])]))];
            let mut inertias = vec![inertia(torso_inertia, &[2])];
            let mut contacts = Vec::new();
            for (leg, name) in ["left", "right"].iter().enumerate() {
                let hip = 3 + 3 * leg;
                let (knee, ankle) = (hip + 1, hip + 2);
                let thigh = seg(&[2, hip], [0.0, -thigh_length]);
                let calf = seg(&[2, hip, knee], [0.0, -calf_length]);
                masses.push(mass(
                    format!("{name}_thigh"),
                    thigh_mass,
                    chain(base, vec![seg(&[2, hip], [0.0, -0.5 * thigh_length])]),
                ));
                masses.push(mass(
                    format!("{name}_calf"),
                    calf_mass,
                    chain(base, vec![thigh.clone(), seg(&[2, hip, knee], [0.0, -0.5 * calf_length])]),
                ));
                masses.push(mass(
                    format!("{name}_foot"),
                    foot_mass,
                    chain(base, vec![thigh.clone(), calf.clone()]),
                ));
                inertias.push(inertia(thigh_inertia, &[2, hip]));
                inertias.push(inertia(calf_inertia, &[2, hip, knee]));
                inertias.push(inertia(foot_inertia, &[2, hip, knee, ankle]));
                for (part, x) in [("toe", toe_length), ("heel", -heel_length)] {
                    contacts.push(ground(
                        format!("{name}_{part}"),
                        chain(
                            base,
                            vec![thigh.clone(), calf.clone(), seg(&[2, hip, knee, ankle], [x, 0.0])],
                        ),
                        friction,
                    ));
                }
            }
            let mut actuators: Vec<Actuator> = (3..9).map(|index| Actuator::Coordinate { index }).collect();
            actuators.push(Actuator::Coordinate { index: 2 });
            ModelSpec {
                name: "biped".into(),
                nq: 9,
                nu: 7,
                timestep,
                gravity,
                masses,
                inertias,
                actuators,
                contacts,
                base,
                params: params.clone(),
            }
        }
    }
}
