"""CLI subcommands; each module exposes ``register(subparsers)``."""
from . import analyze, invert_type, measure, model, pipeline, synth, varifold

SUBCOMMANDS = (synth, analyze, measure, varifold, invert_type, pipeline, model)
