"""
Command-line subcommands.

Each module registers one subparser and a handler taking (args, settings).
"""

from app.commands.evaluate import register as register_eval
from app.commands.gen_data import register as register_gen_data
from app.commands.plan import register as register_plan
from app.commands.probe import register as register_probe
from app.commands.train import register as register_train

REGISTRARS = [
    register_gen_data,
    register_train,
    register_eval,
    register_probe,
    register_plan,
]

__all__ = [
    "REGISTRARS",
    "register_eval",
    "register_gen_data",
    "register_plan",
    "register_probe",
    "register_train",
]
