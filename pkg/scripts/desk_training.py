"""Train the desk-scale model on synthetic pieces and compare its rhythm
controllability with an untrained model of the same shape.

    python3 scripts/desk_training.py --steps 2000 --out runs/desk
"""

from __future__ import annotations

import json
from pathlib import Path

import click

from orchestyle.experiments import desk_training


@click.command()
@click.option("--pieces", type=int, default=200, show_default=True)
@click.option("--held-out", type=int, default=24, show_default=True)
@click.option("--steps", type=int, default=2000, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", type=click.Path(file_okay=False, path_type=Path), default=Path("runs/desk"), show_default=True)
def main(pieces: int, held_out: int, steps: int, seed: int, out: Path) -> None:
    out.mkdir(parents=True, exist_ok=True)
    result = desk_training(n_pieces=pieces, n_held_out=held_out, steps=steps, seed=seed,
                           checkpoint_path=str(out / "model.pt"))
    summary = {
        "pieces": pieces,
        "steps": steps,
        "seconds": round(result.seconds, 1),
        "initial_reconstruction": result.initial_loss,
        "final_reconstruction": result.final_loss,
        "halved": result.halved,
        "rhythm_spearman_trained": result.trained.to_json(),
        "rhythm_spearman_untrained": result.untrained.to_json(),
    }
    (out / "summary.json").write_text(json.dumps(summary, indent=1))
    (out / "train_log.jsonl").write_text("".join(json.dumps(r) + "\n" for r in result.log))
    click.echo(json.dumps(summary, indent=1))


if __name__ == "__main__":
    main()
