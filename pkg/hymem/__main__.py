def main():
    import fire
    from .cli import HyMemCLI
    fire.Fire(HyMemCLI)


if __name__ == '__main__':
    main()
