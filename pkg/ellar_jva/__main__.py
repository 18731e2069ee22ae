from ellar_jva.cli import main

main()
