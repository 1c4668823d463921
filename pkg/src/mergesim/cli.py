"""Command-line interface.

Subcommands cover the full pipeline: ``train`` (fixed levels and the dynamic
policy), ``evaluate`` (collision-rate tables), ``simulate`` (per-step JSONL
traces), and ``stats`` (trajectory-file distribution analysis). Every command
archives its effective configuration beside its outputs and never overwrites
existing results; all randomness derives from one master seed.

Exit codes: 0 success, 2 usage error, 3 missing prerequisite (e.g. an
untrained policy), 4 runtime error.
"""

from __future__ import annotations

import json
import sys
from dataclasses import replace
from pathlib import Path

import click

from . import hierarchy, plots, tracestats
from .config import RunConfig, config_digest, load_config, save_config
from .errors import MergesimError, PrerequisiteError
from .evaluate import TrafficSpec, emit_tables, run_experiment
from .hierarchy import (DYNAMIC, PolicyStore, TRAINED_LEVELS, reduced_curriculum,
                        train_dynamic, train_level_k)
from .traces import write_simulation_traces

EGO_CHOICES = ("level0",) + TRAINED_LEVELS + (DYNAMIC,)
TRAFFIC_CHOICES = EGO_CHOICES + ("mixed",)


def _load_run_config(config_path, seed) -> RunConfig:
    cfg = load_config(config_path) if config_path else RunConfig()
    if seed is not None:
        cfg = replace(cfg, seed=seed)
    cfg.validate()
    return cfg


def fresh_dir(base: Path) -> Path:
    """Return ``base`` if unused, else the first free ``base-N`` variant."""
    if not base.exists() or not any(base.iterdir()):
        base.mkdir(parents=True, exist_ok=True)
        return base
    n = 2
    while True:
        candidate = base.with_name(f"{base.name}-{n}")
        if not candidate.exists():
            candidate.mkdir(parents=True)
            return candidate
        n += 1


def _archive_config(cfg: RunConfig, out_dir: Path) -> None:
    save_config(cfg, out_dir / "config.yaml")
    (out_dir / "config_digest.txt").write_text(config_digest(cfg) + "\n")


@click.group()
def cli():
    """Highway-merging simulator: train, evaluate, and inspect driver policies."""


@cli.command()
@click.option("--level", "level", required=True,
              type=click.Choice(["1", "2", "3", "dynamic"]),
              help="Which policy to train (fixed levels need the previous one).")
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False),
              envvar="MERGESIM_CONFIG", help="YAML run configuration.")
@click.option("--seed", type=int, envvar="MERGESIM_SEED",
              help="Master seed (overrides the config).")
@click.option("--out", "out_dir", type=click.Path(file_okay=False), default="runs",
              envvar="MERGESIM_OUT", show_default=True,
              help="Run directory; the policy store lives at <out>/policies.")
@click.option("--episodes", type=int, default=None,
              help="Shorten the training schedule (phases rescale proportionally).")
@click.option("--population-cap", type=int, default=None,
              help="Drop population values above this from the curriculum.")
@click.option("--checkpoint-every", type=int, default=100, show_default=True)
@click.option("--plots/--no-plots", "render_plots", default=True, show_default=True,
              help="Render the training reward curve next to the episode log.")
@click.option("--quiet", is_flag=True, help="Suppress per-block progress lines.")
def train(level, config_path, seed, out_dir, episodes, population_cap,
          checkpoint_every, render_plots, quiet):
    """Train one policy and select its best checkpoint."""
    cfg = _load_run_config(config_path, seed)
    if episodes is not None or population_cap is not None:
        curriculum = reduced_curriculum(cfg.curriculum,
                                        episodes or cfg.curriculum.episodes,
                                        population_cap)
        cfg = replace(cfg, curriculum=curriculum)
        cfg.validate()

    out = Path(out_dir)
    store = PolicyStore(out / "policies")
    policy_id = DYNAMIC if level == "dynamic" else f"level{level}"
    policy_dir = store.policy_dir(policy_id)
    if policy_dir.exists() and any(policy_dir.iterdir()):
        n = 1
        while policy_dir.with_name(f"{policy_id}-prev{n}").exists():
            n += 1
        archived = policy_dir.with_name(f"{policy_id}-prev{n}")
        policy_dir.rename(archived)
        click.echo(f"existing {policy_id} output moved to {archived}")
    policy_dir.mkdir(parents=True, exist_ok=True)
    _archive_config(cfg, policy_dir)

    total = cfg.curriculum.episodes
    block = max(1, total // 20)

    def progress(episode, record):
        if not quiet and (episode + 1) % block == 0:
            click.echo(f"[{policy_id}] episode {episode + 1}/{total} "
                       f"reward {record['reward']:.1f} T {record['temperature']:.2f} "
                       f"pop {record['population']}")

    if policy_id == DYNAMIC:
        result = train_dynamic(store, cfg, checkpoint_every=checkpoint_every,
                               progress=progress)
    else:
        result = train_level_k(int(level), store, cfg,
                               checkpoint_every=checkpoint_every, progress=progress)

    if render_plots:
        records = [json.loads(line) for line in
                   Path(result.log_path).read_text().splitlines() if line]
        figure = plots.save_training_curve(records, policy_dir / "training_reward.png")
        click.echo(f"reward curve: {figure}")
    click.echo(f"best checkpoint: {result.best_checkpoint}")
    click.echo(f"policy saved: {result.best_path}")


@cli.command("evaluate")
@click.option("--ego", "egos", multiple=True, required=True,
              type=click.Choice(EGO_CHOICES), help="Ego policy (repeatable).")
@click.option("--traffic", "traffics", multiple=True, required=True,
              type=click.Choice(TRAFFIC_CHOICES), help="Traffic composition (repeatable).")
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False),
              envvar="MERGESIM_CONFIG")
@click.option("--seed", type=int, envvar="MERGESIM_SEED")
@click.option("--out", "out_dir", type=click.Path(file_okay=False), default="runs",
              envvar="MERGESIM_OUT", show_default=True)
@click.option("--episodes", "episodes_per_population", type=int, default=None,
              help="Episodes per population value (default from config).")
@click.option("--quiet", is_flag=True)
def evaluate_cmd(egos, traffics, config_path, seed, out_dir, episodes_per_population,
                 quiet):
    """Measure collision rates for every requested (ego, traffic) pair."""
    cfg = _load_run_config(config_path, seed)
    store = PolicyStore(Path(out_dir) / "policies")
    run_dir = fresh_dir(Path(out_dir) / "eval")
    _archive_config(cfg, run_dir)

    spec_kwargs = {"population_set": cfg.evaluation.population_set,
                   "episodes_per_population":
                       episodes_per_population or cfg.evaluation.episodes_per_population}
    stats = {}
    for ego in egos:
        for traffic in traffics:
            spec = TrafficSpec(composition=traffic, **spec_kwargs)
            if not quiet:
                click.echo(f"evaluating ego={ego} traffic={traffic} "
                           f"({spec.total_episodes} episodes)")
            stats[(ego, traffic)] = run_experiment(ego, spec, store, cfg)
            if not quiet:
                click.echo(f"  collision rate {stats[(ego, traffic)].rate:.4f}")
    paths = emit_tables(stats, run_dir)
    for label, path in paths.items():
        click.echo(f"{label}: {path}")


@cli.command()
@click.option("--ego", required=True, type=click.Choice(EGO_CHOICES))
@click.option("--traffic", required=True, type=click.Choice(TRAFFIC_CHOICES))
@click.option("--episodes", type=int, default=10, show_default=True)
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False),
              envvar="MERGESIM_CONFIG")
@click.option("--seed", type=int, envvar="MERGESIM_SEED")
@click.option("--out", "out_dir", type=click.Path(file_okay=False), default="runs",
              envvar="MERGESIM_OUT", show_default=True)
def simulate(ego, traffic, episodes, config_path, seed, out_dir):
    """Write per-step JSONL traces (includes the dynamic ego's level choices)."""
    cfg = _load_run_config(config_path, seed)
    store = PolicyStore(Path(out_dir) / "policies")
    run_dir = fresh_dir(Path(out_dir) / "simulate")
    _archive_config(cfg, run_dir)
    spec = TrafficSpec(composition=traffic,
                       population_set=cfg.evaluation.population_set,
                       episodes_per_population=cfg.evaluation.episodes_per_population)
    summary = write_simulation_traces(ego, spec, episodes, store, cfg,
                                      run_dir / "traces.jsonl")
    click.echo(f"traces: {summary['path']} "
               f"({summary['episodes']} episodes, {summary['collisions']} collisions)")


_SCOPES = {"main": (1,), "ramp": (0,), "both": None}


@cli.command()
@click.argument("trace_file", type=click.Path(exists=True, dir_okay=False))
@click.option("--out", "out_dir", type=click.Path(file_okay=False), default="runs",
              envvar="MERGESIM_OUT", show_default=True)
@click.option("--bins", type=int, default=30, show_default=True)
@click.option("--car-length", type=float, default=5.0, show_default=True)
@click.option("--emit-config-fragment", is_flag=True,
              help="Also write env-parameter suggestions derived from the moments.")
@click.option("--plots/--no-plots", "render_plots", default=True, show_default=True)
def stats(trace_file, out_dir, bins, car_length, emit_config_fragment, render_plots):
    """Distribution analysis of a trajectory file (headway, velocity, ...)."""
    records = tracestats.load_trajectories(trace_file)
    run_dir = fresh_dir(Path(out_dir) / "stats")
    if not records:
        click.echo("warning: no trajectory records found; writing empty outputs",
                   err=True)

    moments = {}
    for scope, lanes in _SCOPES.items():
        dists = {
            "headway": tracestats.headway_distribution(records, lanes,
                                                       car_length=car_length, bins=bins),
            "velocity": tracestats.velocity_distribution(records, lanes, bins=bins),
            "acceleration": tracestats.acceleration_distribution(records, lanes,
                                                                 bins=bins),
            "population": tracestats.population_distribution(records, lanes),
        }
        for name, dist in dists.items():
            dist.write_csv(run_dir / f"{name}_{scope}.csv")
            if render_plots:
                plots.save_histogram_figure(dist, f"{name} ({scope})",
                                            run_dir / f"{name}_{scope}.png")
        moments[scope] = {name: dist.moments.as_dict() for name, dist in dists.items()}

    (run_dir / "moments.json").write_text(json.dumps(moments, indent=2, sort_keys=True)
                                          + "\n")
    if emit_config_fragment:
        both = moments["both"]
        fragment = tracestats.suggest_env_fragment(
            tracestats.Moments(**_from_dict(both["headway"])),
            tracestats.Moments(**_from_dict(both["velocity"])))
        import yaml
        (run_dir / "env_suggestions.yaml").write_text(yaml.safe_dump(fragment))
        click.echo(f"config fragment: {run_dir / 'env_suggestions.yaml'}")
    click.echo(f"stats written to {run_dir}")


def _from_dict(d: dict) -> dict:
    return {"count": d["count"], "mean": d["mean"], "std": d["std"],
            "minimum": d["min"], "maximum": d["max"]}


def main(argv=None) -> int:
    """Entry point with the documented exit-code classes."""
    try:
        cli.main(args=argv, standalone_mode=False)
        return 0
    except click.exceptions.Exit as exc:
        return exc.exit_code
    except click.UsageError as exc:
        exc.show()
        return 2
    except click.ClickException as exc:
        exc.show()
        return exc.exit_code
    except PrerequisiteError as exc:
        click.echo(f"prerequisite error: {exc}", err=True)
        return 3
    except MergesimError as exc:
        click.echo(f"error: {exc}", err=True)
        return 4


if __name__ == "__main__":
    sys.exit(main())
