from .cli_io.main import main

main()
