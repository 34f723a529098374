# color text
import logging

from colorama import Fore, Style, just_fix_windows_console

just_fix_windows_console()


class Color:
    reset = Style.RESET_ALL
    bold = Style.BRIGHT
    red = Fore.RED
    green = Fore.GREEN
    yellow = Fore.YELLOW


class ColorFormatter(logging.Formatter):
    """Console formatter with [*] / [!] / [-] level prefixes."""

    PREFIXES = {
        logging.DEBUG: ("[.]", ""),
        logging.INFO: ("[*]", Color.green),
        logging.WARNING: ("[!]", Color.yellow),
        logging.ERROR: ("[-]", Color.red),
        logging.CRITICAL: ("[-]", Color.red),
    }

    def __init__(self, use_color: bool = True):
        super().__init__("%(message)s")
        self.use_color = use_color

    def format(self, record: logging.LogRecord) -> str:
        prefix, color = self.PREFIXES.get(record.levelno, ("[*]", ""))
        message = super().format(record)
        if not self.use_color:
            return f"{prefix} {message}"
        return f"{Color.bold}{color}{prefix}{Color.reset} {message}"
