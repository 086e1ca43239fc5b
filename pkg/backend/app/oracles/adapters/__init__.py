# Oracle adapters module