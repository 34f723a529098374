import logging
import sys
from os import makedirs, path

from core.color import Color, ColorFormatter


# welcome screen, stderr only: stdout carries machine output
def logo(use_color: bool = True):
    art = """
    \t    ┏━┓╻┏━╸╻┏ ┏━╸┏━┓┏━┓
    \t    ┣━┛┃┃  ┣┻┓┃  ┣━┫┣━┛
    \t    ╹  ╹┗━╸╹ ╹┗━╸╹ ╹╹   v1.0"""
    if use_color:
        print(f"{Color.green}{Color.bold}{art}{Color.reset}", file=sys.stderr)
    else:
        print(art, file=sys.stderr)


def break_and_help():
    return (
        "pickcap trains and runs an informative-frame picking policy in front of a "
        "recurrent video captioner, on synthetic or precomputed frame features."
    )


def setup_logging(level: str = "INFO", use_color: bool = True) -> None:
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(ColorFormatter(use_color=use_color))
    root = logging.getLogger()
    for existing in list(root.handlers):
        root.removeHandler(existing)
    root.addHandler(handler)
    root.setLevel(level.upper())


# create output folder
def create_output_folder(folder_name: str) -> str:
    if not path.exists(folder_name):
        makedirs(folder_name)
    return folder_name
