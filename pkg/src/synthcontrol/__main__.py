from synthcontrol.cli import main

main()
