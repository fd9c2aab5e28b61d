#!/usr/bin/env python3
"""
Write the example scenarios and the pipeline config into configs/.

    python scripts/write_example_configs.py [output_dir]
"""
import os
import sys

# 添加项目根目录到Python路径
project_root = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
sys.path.insert(0, project_root)

from force_aggregator.config import PipelineConfig
from force_aggregator.domain import Position, default_templates
from force_aggregator.scengen import ObserverSpec, ScenarioSpec, UnitSpec
from force_aggregator.writers import write_json


def two_platoons(seed: int = 7, drop_vehicles=()) -> ScenarioSpec:
    """One mech platoon and one MBT platoon 6 km apart, each watched by a close observer."""
    return ScenarioSpec(
        units=(
            UnitSpec("mech_platoon", Position(0.0, 0.0), (Position(2000.0, 0.0),), speed=5.0, spacing=100.0),
            UnitSpec("mbt_platoon", Position(6000.0, 0.0), (Position(8000.0, 0.0),), speed=5.0, spacing=100.0),
        ),
        observers=(
            ObserverSpec("obs-1", (Position(0.0, -300.0),)),
            ObserverSpec("obs-2", (Position(6000.0, -300.0),)),
        ),
        duration=20.0,
        report_period=2.0,
        position_sigma=2.0,
        orientation_sigma=0.05,
        seed=seed,
        drop_vehicles=tuple(drop_vehicles),
    )


def main(output_dir: str = "configs") -> None:
    if not os.path.exists(output_dir):
        os.makedirs(output_dir)
    write_json(two_platoons().to_dict(), os.path.join(output_dir, "two_platoons.json"))
    write_json(two_platoons(drop_vehicles=("mech_platoon-1/3", "mech_platoon-1/4")).to_dict(),
               os.path.join(output_dir, "two_platoons_remainder.json"))
    write_json({"cluster_threshold": 2.0}, os.path.join(output_dir, "pipeline.json"))
    write_json(PipelineConfig().to_dict(), os.path.join(output_dir, "defaults.json"))
    write_json({"templates": [t.to_dict() for t in default_templates()]},
               os.path.join(output_dir, "templates.json"))
    print(f"Example files written to {output_dir}")


if __name__ == "__main__":
    main(*sys.argv[1:2])
