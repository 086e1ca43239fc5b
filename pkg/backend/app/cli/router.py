from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Tuple
import argparse

Handler = Callable[[argparse.Namespace], int]

def arg(*flags: str, **kwargs: Any) -> Tuple[Tuple[str, ...], Dict[str, Any]]:
    return flags, kwargs

@dataclass
class Command:
    name: str
    help: str
    handler: Handler
    arguments: List[Tuple[Tuple[str, ...], Dict[str, Any]]] = field(default_factory=list)

class CommandRouter:
    """Collects subcommands; routers are merged with include_router"""

    def __init__(self):
        self.commands: Dict[str, Command] = {}

    def command(self, name: str, help: str, arguments=()) -> Callable[[Handler], Handler]:
        def decorator(handler: Handler) -> Handler:
            self.commands[name] = Command(name=name, help=help, handler=handler, arguments=list(arguments))
            return handler
        return decorator

    def include_router(self, router: "CommandRouter") -> None:
        for name, command in router.commands.items():
            if name in self.commands:
                raise ValueError(f"duplicate subcommand '{name}'")
            self.commands[name] = command

    def attach(self, parser: argparse.ArgumentParser, common: Callable[[argparse.ArgumentParser], None]) -> None:
        subparsers = parser.add_subparsers(dest="command", required=True)
        for command in self.commands.values():
            sub = subparsers.add_parser(command.name, help=command.help, description=command.help)
            common(sub)
            for flags, kwargs in command.arguments:
                sub.add_argument(*flags, **kwargs)
            sub.set_defaults(handler=command.handler)
