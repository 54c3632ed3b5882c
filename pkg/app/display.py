'''Terminal rendering of results and the CSV writer shared by every output.'''

import csv
import json
import math

from colorama import init, Fore, Style

# Initialize colorama for cross-platform colored output
init(autoreset=True)


def format_number(value):
    '''Formats a value for CSV: shortest round-trip decimal for floats.'''
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, int):
        return str(value)
    if isinstance(value, float):
        if math.isnan(value):
            return "nan"
        return repr(value)
    try:
        return repr(float(value))
    except (TypeError, ValueError):
        return str(value)


def write_csv(path, columns, rows, metadata=None):
    '''Writes rows under a header; metadata goes first as "# key=value" lines.

    Args:
        path: output file
        columns: column names
        rows: iterable of sequences matching columns
        metadata: dict written as comment lines (values JSON-encoded when not str)
    '''
    with open(path, "w", newline="") as handle:
        for key, value in (metadata or {}).items():
            text = value if isinstance(value, str) else json.dumps(value, sort_keys=True)
            handle.write(f"# {key}={text}\n")
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            writer.writerow([format_number(value) for value in row])


def read_csv(path):
    '''Reads a file written by write_csv.

    Returns:
        tuple: (metadata dict of strings, column names, list of row lists of strings)
    '''
    metadata = {}
    with open(path, newline="") as handle:
        lines = handle.read().splitlines()
    body = []
    for line in lines:
        if line.startswith("# ") and not body:
            key, _, value = line[2:].partition("=")
            metadata[key] = value
        else:
            body.append(line)
    reader = csv.reader(body)
    rows = list(reader)
    if not rows:
        return metadata, [], []
    return metadata, rows[0], rows[1:]


class Display:
    '''Prints coloured summaries of kernels, clouds and experiment reports.'''
    BAR_LENGTH = 60

    def apply_color_to_text(self, text, color):
        '''Apply colorama color to text with auto-reset.'''
        return f"{color}{text}{Style.RESET_ALL}"

    def status(self, passed):
        '''Returns a coloured PASS/FAIL tag.'''
        if passed:
            return self.apply_color_to_text("PASS", Fore.GREEN)
        return self.apply_color_to_text("FAIL", Fore.RED)

    def print_header(self, title):
        print("\n" + "=" * self.BAR_LENGTH)
        print(self.apply_color_to_text(title.center(self.BAR_LENGTH), Fore.CYAN))
        print("=" * self.BAR_LENGTH)

    def print_values(self, values):
        '''Prints aligned "name: value" lines.'''
        width = max((len(str(key)) for key in values), default=0)
        for key, value in values.items():
            shown = format_number(value) if isinstance(value, (int, float)) else value
            print(f"  {str(key).ljust(width)} : {shown}")

    def print_kernel_info(self, info):
        self.print_header(f"KERNEL {info['kernel']}  (d = {info['d']})")
        self.print_values({key: value for key, value in info.items() if key not in ("kernel", "d", "jumps")})
        if info.get("jumps"):
            jumps = ", ".join(f"{location:g} ({size:+g})" for location, size in info["jumps"])
            print(f"  jumps of K : {jumps}")

    def print_checks(self, checks):
        '''Prints one PASS/FAIL line per named check.'''
        for name, passed in checks.items():
            print(f"  {self.status(passed)}  {name}")

    def print_report(self, title, summary):
        '''Prints the JSON summary of an experiment.'''
        self.print_header(title)
        values = {key: value for key, value in summary.items()
                  if isinstance(value, (int, float, str)) and not isinstance(value, bool)}
        self.print_values(values)
        if summary.get("checks"):
            print()
            self.print_checks(summary["checks"])
        if summary.get("files"):
            print()
            for path in summary["files"]:
                print(f"  wrote {self.apply_color_to_text(path, Fore.YELLOW)}")

    def print_error(self, message):
        print(self.apply_color_to_text(f"error: {message}", Fore.RED))
