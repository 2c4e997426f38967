"""
``python -m jdrecon`` runs the command-line interface.
"""

from .cli import cli

if __name__ == "__main__":
    cli(prog_name="jdrecon")
