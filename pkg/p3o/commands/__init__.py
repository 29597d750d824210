# Subcommands: each module exposes register(subparsers) and its handler
